#include "ddu/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "ddu/errors.hpp"
#include "ddu/io.hpp"
#include "ddu/rng.hpp"

namespace ddu {

namespace {

constexpr double kPi = std::numbers::pi;

// Stream ids keep coordinate, noise and label draws independent.
enum Stream : std::uint64_t { kShuffle = 1, kNoise = 2, kLabels = 3, kPoints = 4, kFlags = 5 };

Dataset make_empty(std::size_t dim, int num_classes) {
  Dataset d;
  d.x = Matrix(0, dim);
  d.num_classes = num_classes;
  return d;
}

void push(Dataset& d, std::span<const double> row, int label, bool ambiguous, Split split) {
  d.x.append_row(row);
  d.y.push_back(label);
  d.ambiguous.push_back(ambiguous);
  d.split.push_back(split);
}

}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Pool: return "pool";
    case Split::Test: return "test";
    case Split::Ood: return "ood";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "pool") return Split::Pool;
  if (name == "test") return Split::Test;
  if (name == "ood") return Split::Ood;
  throw ParseError("unknown split tag '" + std::string(name) + "'");
}

void Dataset::validate() const {
  const std::size_t n = y.size();
  if (x.rows() != n || ambiguous.size() != n || split.size() != n) {
    throw ShapeMismatch("dataset columns disagree on row count");
  }
  if (!x.all_finite()) throw DomainError("dataset contains non-finite features");
  for (int label : y) {
    if (label < 0 || label >= num_classes) {
      throw DomainError("label " + std::to_string(label) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out = make_empty(dim(), num_classes);
  out.x.data().reserve(rows.size() * dim());
  for (std::size_t r : rows) {
    if (r >= size()) throw IndexOutOfRange("subset row " + std::to_string(r));
    push(out, x.row(r), y[r], ambiguous[r], split[r]);
  }
  return out;
}

void Dataset::append(const Dataset& other) {
  if (size() > 0 && other.size() > 0 && dim() != other.dim()) {
    throw ShapeMismatch("appending datasets of different dimension");
  }
  if (size() == 0 && x.cols() != other.dim()) x = Matrix(0, other.dim());
  for (std::size_t r = 0; r < other.size(); ++r) {
    push(*this, other.x.row(r), other.y[r], other.ambiguous[r], other.split[r]);
  }
  num_classes = std::max(num_classes, other.num_classes);
}

void Dataset::set_split(Split s) { std::fill(split.begin(), split.end(), s); }

Dataset two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2) throw InvalidCount("two_moons needs n >= 2, got " + std::to_string(n));
  if (!(noise >= 0.0)) throw InvalidCount("two_moons noise must be non-negative");
  const std::size_t n_upper = n / 2;
  const std::size_t n_lower = n - n_upper;
  auto arc = [](std::size_t i, std::size_t count) {
    return count == 1 ? 0.0 : kPi * static_cast<double>(i) / static_cast<double>(count - 1);
  };

  std::vector<std::array<double, 2>> pts;
  std::vector<int> labels;
  pts.reserve(n);
  for (std::size_t i = 0; i < n_upper; ++i) {
    const double t = arc(i, n_upper);
    pts.push_back({std::cos(t), std::sin(t)});
    labels.push_back(0);
  }
  for (std::size_t i = 0; i < n_lower; ++i) {
    const double t = arc(i, n_lower);
    pts.push_back({1.0 - std::cos(t), 1.0 - std::sin(t) - 0.5});
    labels.push_back(1);
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng::derive(seed, kShuffle).shuffle(order);

  Rng noise_rng = Rng::derive(seed, kNoise);
  Dataset d = make_empty(2, 2);
  d.x.data().reserve(2 * n);
  for (std::size_t i : order) {
    std::array<double, 2> p = pts[i];
    if (noise > 0.0) {
      p[0] += noise * noise_rng.normal();
      p[1] += noise * noise_rng.normal();
    }
    push(d, p, labels[i], false, Split::Train);
  }
  return d;
}

const Matrix& three_gaussians_means() {
  static const Matrix means{{-3.5, 0.0}, {3.5, 0.0}, {0.0, 4.5}};
  return means;
}

Dataset three_gaussians_label_noise(std::size_t n, double noise_rate, std::uint64_t seed) {
  if (!(noise_rate >= 0.0 && noise_rate < 1.0)) {
    throw InvalidRate("noise_rate must lie in [0, 1), got " + std::to_string(noise_rate));
  }
  const Matrix& means = three_gaussians_means();
  Rng pts = Rng::derive(seed, kPoints);
  Dataset d = make_empty(2, 3);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 3);
    const std::array<double, 2> p{pts.normal(means(c, 0), 1.0), pts.normal(means(c, 1), 1.0)};
    push(d, p, c, false, Split::Train);
  }

  const auto n_flip = static_cast<std::size_t>(std::llround(noise_rate * static_cast<double>(n)));
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  Rng flags = Rng::derive(seed, kFlags);
  flags.shuffle(rows);
  Rng labels = Rng::derive(seed, kLabels);
  for (std::size_t k = 0; k < n_flip; ++k) {
    const std::size_t r = rows[k];
    const int shift = 1 + static_cast<int>(labels.uniform_int(2));
    d.y[r] = (d.y[r] + shift) % 3;
    d.ambiguous[r] = true;
  }
  return d;
}

double distance_to_upper_arc(double px, double py) {
  // Unit semicircle centred at the origin, y >= 0.
  if (py >= 0.0) return std::abs(std::hypot(px, py) - 1.0);
  return std::min(std::hypot(px - 1.0, py), std::hypot(px + 1.0, py));
}

double distance_to_lower_arc(double px, double py) {
  // Unit semicircle centred at (1, 0.5), y <= 0.5.
  const double dx = px - 1.0;
  const double dy = py - 0.5;
  if (dy <= 0.0) return std::abs(std::hypot(dx, dy) - 1.0);
  return std::min(std::hypot(px, dy), std::hypot(px - 2.0, dy));
}

bool in_ambiguous_band(double px, double py) {
  const double d0 = distance_to_upper_arc(px, py);
  const double d1 = distance_to_lower_arc(px, py);
  // |d0 - d1| / 2 approximates the distance to the equidistant curve.
  return std::abs(d0 - d1) <= 0.5 && std::max(d0, d1) <= 1.0;
}

Dataset ambiguous_pool(std::size_t n_clean, std::size_t n_ambiguous, std::uint64_t seed, double noise) {
  Dataset d = n_clean >= 2 ? two_moons(n_clean, noise, seed) : make_empty(2, 2);
  if (n_clean == 1) throw InvalidCount("ambiguous_pool needs n_clean != 1");
  for (std::size_t i = 0; i < d.size(); ++i) d.split[i] = Split::Pool;

  Rng pts = Rng::derive(seed, kPoints);
  Rng labels = Rng::derive(seed, kLabels);
  d.x.data().reserve(d.x.data().size() + 2 * n_ambiguous);
  for (std::size_t i = 0; i < n_ambiguous; ++i) {
    double px;
    double py;
    do {
      px = pts.uniform(-1.5, 2.5);
      py = pts.uniform(-1.25, 1.75);
    } while (!in_ambiguous_band(px, py));
    const std::array<double, 2> p{px, py};
    push(d, p, labels.bernoulli(0.5) ? 1 : 0, true, Split::Pool);
  }
  d.num_classes = 2;
  return d;
}

Dataset toy_1d(std::uint64_t seed) {
  constexpr std::size_t kPerCluster = 100;
  constexpr std::size_t kPerBand = 100;
  constexpr double kClusterStd = 0.15;
  Rng pts = Rng::derive(seed, kPoints);
  Rng labels = Rng::derive(seed, kLabels);
  Dataset d = make_empty(1, 2);
  for (const double centre : {-5.0, -3.0, 3.0, 5.0}) {
    for (std::size_t i = 0; i < kPerCluster; ++i) {
      double x;
      do {
        x = pts.normal(centre, kClusterStd);
      } while (std::abs(x - centre) >= 0.5);
      push(d, std::array<double, 1>{x}, x < 0.0 ? 0 : 1, false, Split::Train);
    }
  }
  for (const double sign : {-1.0, 1.0}) {
    for (std::size_t i = 0; i < kPerBand; ++i) {
      const double x = sign * pts.uniform(3.5, 4.5);
      push(d, std::array<double, 1>{x}, labels.bernoulli(0.5) ? 1 : 0, true, Split::Train);
    }
  }
  return d;
}

Dataset uniform_ood_box(std::size_t n, const Vector& lo, const Vector& hi, const Dataset& exclusion,
                        double min_dist, std::uint64_t seed) {
  if (lo.size() != hi.size() || lo.empty()) throw ShapeMismatch("box bounds disagree in length");
  for (std::size_t k = 0; k < lo.size(); ++k) {
    if (!(lo[k] < hi[k])) throw DomainError("box requires lo < hi in every coordinate");
  }
  if (!(min_dist >= 0.0)) throw DomainError("min_dist must be non-negative");
  if (exclusion.size() > 0 && exclusion.dim() != lo.size()) {
    throw ShapeMismatch("exclusion set dimension does not match the box");
  }
  constexpr std::size_t kMaxFailures = 1'000'000;
  const double min_sq = min_dist * min_dist;
  const std::size_t dim = lo.size();
  Rng rng = Rng::derive(seed, kPoints);
  Dataset d = make_empty(dim, std::max(exclusion.num_classes, 1));
  Vector p(dim);
  std::size_t failures = 0;
  while (d.size() < n) {
    for (std::size_t k = 0; k < dim; ++k) p[k] = rng.uniform(lo[k], hi[k]);
    bool ok = true;
    for (std::size_t r = 0; r < exclusion.size() && ok; ++r) {
      const auto e = exclusion.x.row(r);
      double s = 0.0;
      for (std::size_t k = 0; k < dim; ++k) s += (p[k] - e[k]) * (p[k] - e[k]);
      ok = s >= min_sq;
    }
    if (!ok) {
      if (++failures >= kMaxFailures) {
        throw ExhaustedSampling("rejection sampling failed " + std::to_string(kMaxFailures) + " times");
      }
      continue;
    }
    failures = 0;
    push(d, p, 0, false, Split::Ood);
  }
  return d;
}

void write_csv(std::ostream& os, const Dataset& d) {
  for (std::size_t k = 0; k < d.dim(); ++k) os << 'x' << k << ',';
  os << "y,ambiguous,split\n";
  for (std::size_t r = 0; r < d.size(); ++r) {
    for (std::size_t k = 0; k < d.dim(); ++k) os << format_double(d.x(r, k)) << ',';
    os << d.y[r] << ',' << (d.ambiguous[r] ? 1 : 0) << ',' << split_name(d.split[r]) << '\n';
  }
}

Dataset read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty CSV input");
  const auto header = split_csv_line(line);
  std::size_t dim = 0;
  int y_col = -1;
  int amb_col = -1;
  int split_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h == "x" + std::to_string(dim)) {
      if (c != dim) throw ParseError("feature columns must come first");
      ++dim;
    } else if (h == "y") {
      y_col = static_cast<int>(c);
    } else if (h == "ambiguous") {
      amb_col = static_cast<int>(c);
    } else if (h == "split") {
      split_col = static_cast<int>(c);
    } else {
      throw ParseError("unexpected CSV column '" + h + "'");
    }
  }
  if (dim == 0) throw ParseError("CSV has no x0 column");

  Dataset d = make_empty(dim, 0);
  Vector row(dim);
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " cells");
    }
    for (std::size_t k = 0; k < dim; ++k) row[k] = parse_double(cells[k]);
    const int label = y_col >= 0 ? std::stoi(cells[static_cast<std::size_t>(y_col)]) : 0;
    const bool amb = amb_col >= 0 && cells[static_cast<std::size_t>(amb_col)] == "1";
    const Split s = split_col >= 0 ? parse_split(cells[static_cast<std::size_t>(split_col)]) : Split::Test;
    push(d, row, label, amb, s);
    d.num_classes = std::max(d.num_classes, label + 1);
  }
  return d;
}

}  // namespace ddu
