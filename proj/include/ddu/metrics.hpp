#pragma once

#include <span>
#include <vector>

namespace ddu {

struct CalibrationBin {
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double mean_accuracy = 0.0;
};

struct BinnedCalibration {
  std::vector<double> edges;  // num_bins + 1, from 0 to 1
  std::vector<CalibrationBin> bins;
};

/// Equal-width bins with right-inclusive edges; confidence 0 joins bin 0.
BinnedCalibration calibration_bins(std::span<const double> confidences, const std::vector<bool>& correct,
                                   std::size_t num_bins = 15);

double ece(std::span<const double> confidences, const std::vector<bool>& correct, std::size_t num_bins = 15);

/// Mann-Whitney AUROC with half credit for ties.
double auroc(std::span<const double> scores_positive, std::span<const double> scores_negative);

double accuracy(std::span<const int> predicted, std::span<const int> truth);

}  // namespace ddu
