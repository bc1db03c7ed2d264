#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "ddu/mathcore.hpp"

namespace ddu {

enum class Split { Train, Val, Pool, Test, Ood };

std::string_view split_name(Split s);
Split parse_split(std::string_view name);

/// Feature rows with labels, ambiguity flags and split tags.
struct Dataset {
  Matrix x;
  std::vector<int> y;
  std::vector<bool> ambiguous;
  std::vector<Split> split;
  int num_classes = 0;

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return x.cols(); }

  /// Throws ShapeMismatch / DomainError when the invariants are broken.
  void validate() const;

  Dataset subset(const std::vector<std::size_t>& rows) const;
  void append(const Dataset& other);
  void set_split(Split s);
};

Dataset two_moons(std::size_t n, double noise, std::uint64_t seed);

Dataset three_gaussians_label_noise(std::size_t n, double noise_rate, std::uint64_t seed);

/// Centres of the three classes used by three_gaussians_label_noise.
const Matrix& three_gaussians_means();

/// Clean two-moons rows followed by ambiguous rows drawn from the band
/// between the arcs, labelled by a fair coin.
Dataset ambiguous_pool(std::size_t n_clean, std::size_t n_ambiguous, std::uint64_t seed,
                       double noise = 0.1);

/// Distance from p to the upper (class 0) and lower (class 1) moon arcs.
double distance_to_upper_arc(double px, double py);
double distance_to_lower_arc(double px, double py);

/// True when (px, py) lies in the overlap band used for ambiguous samples.
bool in_ambiguous_band(double px, double py);

/// One-dimensional set: clean clusters at +-3 and +-5 (label 0 for x < 0,
/// 1 for x > 0) and coin-labelled ambiguous bands at |x| in [3.5, 4.5].
Dataset toy_1d(std::uint64_t seed);

Dataset uniform_ood_box(std::size_t n, const Vector& lo, const Vector& hi, const Dataset& exclusion,
                        double min_dist, std::uint64_t seed);

void write_csv(std::ostream& os, const Dataset& d);
/// Reads the CSV written by write_csv. Columns other than x*, y,
/// ambiguous and split are rejected; y/ambiguous/split are optional.
Dataset read_csv(std::istream& is);

}  // namespace ddu
