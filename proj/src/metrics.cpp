#include "ddu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ddu/errors.hpp"

namespace ddu {

BinnedCalibration calibration_bins(std::span<const double> confidences, const std::vector<bool>& correct,
                                   std::size_t num_bins) {
  if (confidences.size() != correct.size()) throw LengthMismatch("confidences and correctness flags differ");
  if (confidences.empty()) throw EmptyInput("no predictions to bin");
  if (num_bins == 0) throw DomainError("num_bins must be at least 1");
  BinnedCalibration out;
  out.edges.resize(num_bins + 1);
  for (std::size_t b = 0; b <= num_bins; ++b) out.edges[b] = static_cast<double>(b) / static_cast<double>(num_bins);
  out.bins.resize(num_bins);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) throw DomainError("confidence outside [0, 1]");
    // Bin b covers (edges[b], edges[b+1]].
    auto b = static_cast<std::size_t>(std::ceil(c * static_cast<double>(num_bins)));
    b = b == 0 ? 0 : b - 1;
    // Guard against ceil rounding past an exact edge.
    while (b > 0 && c <= out.edges[b]) --b;
    while (b + 1 < num_bins && c > out.edges[b + 1]) ++b;
    auto& bin = out.bins[b];
    ++bin.count;
    bin.mean_confidence += c;
    bin.mean_accuracy += correct[i] ? 1.0 : 0.0;
  }
  for (auto& bin : out.bins) {
    if (bin.count == 0) continue;
    bin.mean_confidence /= static_cast<double>(bin.count);
    bin.mean_accuracy /= static_cast<double>(bin.count);
  }
  return out;
}

double ece(std::span<const double> confidences, const std::vector<bool>& correct, std::size_t num_bins) {
  const auto binned = calibration_bins(confidences, correct, num_bins);
  const auto n = static_cast<double>(confidences.size());
  double total = 0.0;
  for (const auto& bin : binned.bins) {
    if (bin.count == 0) continue;
    total += static_cast<double>(bin.count) / n * std::abs(bin.mean_accuracy - bin.mean_confidence);
  }
  return total;
}

double auroc(std::span<const double> scores_positive, std::span<const double> scores_negative) {
  if (scores_positive.empty() || scores_negative.empty()) throw EmptyInput("AUROC needs both classes");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(scores_positive.size() + scores_negative.size());
  for (double s : scores_positive) items.push_back({s, true});
  for (double s : scores_negative) items.push_back({s, false});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Sum over positives of (#negatives strictly below + half the tied negatives).
  double wins = 0.0;
  std::size_t negatives_below = 0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    std::size_t pos = 0;
    std::size_t neg = 0;
    while (j < items.size() && items[j].score == items[i].score) {
      (items[j].positive ? pos : neg) += 1;
      ++j;
    }
    wins += static_cast<double>(pos) * (static_cast<double>(negatives_below) + 0.5 * static_cast<double>(neg));
    negatives_below += neg;
    i = j;
  }
  return wins / (static_cast<double>(scores_positive.size()) * static_cast<double>(scores_negative.size()));
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw LengthMismatch("prediction and label lengths differ");
  if (predicted.empty()) throw EmptyInput("accuracy of zero predictions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

}  // namespace ddu
