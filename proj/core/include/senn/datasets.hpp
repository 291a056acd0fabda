#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "senn/linalg.hpp"
#include "senn/network.hpp"

namespace senn {

struct Dataset {
  Matrix inputs;   // rows are examples
  Matrix targets;  // one-hot for classification
  TaskKind task = TaskKind::least_squares;
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> validation;
  Matrix test_inputs;  // empty unless the source ships a test split
  Matrix test_targets;

  Eigen::Index size() const { return inputs.rows(); }
};

// Seeded permutation split; the first floor(n·fraction) shuffled indices go to validation.
void split_dataset(Dataset& data, double validation_fraction, std::uint64_t seed);

Matrix rows_of(const Matrix& m, const std::vector<Eigen::Index>& idx);

double regression_target(double x);  // sin(3x) + 0.5 sin(7x) exp(−x²)

// x ~ U[−3, 3]; 20% held out for validation.
Dataset gen_regression_1d(Eigen::Index n, double noise, std::uint64_t seed);

// Two interleaved half circles with n/2 points each; 20% held out for validation.
Dataset gen_half_moons(Eigen::Index n, double noise, std::uint64_t seed);

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Throws MissingFile, BadMagic or TruncatedFile.
IdxArray read_idx(const std::string& path, std::uint32_t expected_magic);
void write_idx(const std::string& path, const IdxArray& array);

// Pixels scaled to [0, 1]. A fraction below 1 draws floor(fraction·N/10) items per class.
// 10% of the kept training items become the validation split.
Dataset load_mnist(const std::string& dir, double subset_fraction, std::uint64_t seed,
                   double validation_fraction = 0.1);

// Inverse of the pixel scaling and one-hot encoding, for round trips through IDX.
IdxArray images_to_idx(const Matrix& images, std::uint32_t rows, std::uint32_t cols);
IdxArray labels_to_idx(const Matrix& one_hot);

}  // namespace senn
