#include "senn/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "senn/error.hpp"
#include "senn/rng.hpp"

namespace senn {

namespace {

std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

void put_be32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  os.write(b, 4);
}

Matrix one_hot(const std::vector<std::uint8_t>& labels, int classes) {
  Matrix t = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw Error(ErrorKind::Config, "label out of range");
    t(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return t;
}

}  // namespace

void split_dataset(Dataset& data, double validation_fraction, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(data.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
  std::mt19937_64 eng(stream_seed(seed, {0x5u}));
  std::shuffle(idx.begin(), idx.end(), eng);
  const auto n_val = static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(idx.size())));
  data.validation.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  data.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(data.validation.begin(), data.validation.end());
  std::sort(data.train.begin(), data.train.end());
}

Matrix rows_of(const Matrix& m, const std::vector<Eigen::Index>& idx) {
  return m(idx, Eigen::all);
}

double regression_target(double x) {
  return std::sin(3.0 * x) + 0.5 * std::sin(7.0 * x) * std::exp(-x * x);
}

Dataset gen_regression_1d(Eigen::Index n, double noise, std::uint64_t seed) {
  if (n < 10) throw Error(ErrorKind::Config, "regression fixture needs n >= 10");
  Rng rng(stream_seed(seed, {0x1u}));
  Dataset d;
  d.task = TaskKind::least_squares;
  d.inputs.resize(n, 1);
  d.targets.resize(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = rng.uniform(-3.0, 3.0);
    d.inputs(i, 0) = x;
    d.targets(i, 0) = regression_target(x) + noise * rng.normal();
  }
  split_dataset(d, 0.2, seed);
  return d;
}

Dataset gen_half_moons(Eigen::Index n, double noise, std::uint64_t seed) {
  if (n <= 0 || n % 2 != 0) throw Error(ErrorKind::Config, "half moons needs a positive even n");
  Rng rng(stream_seed(seed, {0x2u}));
  Dataset d;
  d.task = TaskKind::softmax_cross_entropy;
  d.inputs.resize(n, 2);
  d.targets = Matrix::Zero(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int cls = i < n / 2 ? 0 : 1;
    const double t = rng.uniform(0.0, std::numbers::pi);
    double x = cls == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double y = cls == 0 ? std::sin(t) : 0.5 - std::sin(t);
    if (noise > 0.0) {
      x += noise * rng.normal();
      y += noise * rng.normal();
    }
    d.inputs(i, 0) = x;
    d.inputs(i, 1) = y;
    d.targets(i, cls) = 1.0;
  }
  split_dataset(d, 0.2, seed);
  return d;
}

IdxArray read_idx(const std::string& path, std::uint32_t expected_magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path);
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4) throw Error(ErrorKind::TruncatedFile, path + ": no header");
  const std::uint32_t magic = read_be32(bytes.data());
  if (magic != expected_magic) throw Error(ErrorKind::BadMagic, path + ": unexpected magic number");
  const std::size_t ndim = magic & 0xffu;
  if (bytes.size() < 4 + 4 * ndim) throw Error(ErrorKind::TruncatedFile, path + ": short header");
  IdxArray arr;
  std::size_t count = 1;
  for (std::size_t k = 0; k < ndim; ++k) {
    arr.dims.push_back(read_be32(bytes.data() + 4 + 4 * k));
    count *= arr.dims.back();
  }
  const std::size_t offset = 4 + 4 * ndim;
  if (bytes.size() - offset < count) throw Error(ErrorKind::TruncatedFile, path + ": short payload");
  arr.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                  bytes.begin() + static_cast<std::ptrdiff_t>(offset + count));
  return arr;
}

void write_idx(const std::string& path, const IdxArray& array) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path);
  put_be32(out, 0x00000800u | static_cast<std::uint32_t>(array.dims.size()));
  for (std::uint32_t d : array.dims) put_be32(out, d);
  out.write(reinterpret_cast<const char*>(array.data.data()), static_cast<std::streamsize>(array.data.size()));
}

IdxArray images_to_idx(const Matrix& images, std::uint32_t rows, std::uint32_t cols) {
  IdxArray arr;
  arr.dims = {static_cast<std::uint32_t>(images.rows()), rows, cols};
  arr.data.resize(static_cast<std::size_t>(images.size()));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < images.rows(); ++i)
    for (Eigen::Index j = 0; j < images.cols(); ++j)
      arr.data[k++] = static_cast<std::uint8_t>(std::lround(images(i, j) * 255.0));
  return arr;
}

IdxArray labels_to_idx(const Matrix& one_hot_targets) {
  IdxArray arr;
  arr.dims = {static_cast<std::uint32_t>(one_hot_targets.rows())};
  for (Eigen::Index i = 0; i < one_hot_targets.rows(); ++i) {
    Eigen::Index c = 0;
    one_hot_targets.row(i).maxCoeff(&c);
    arr.data.push_back(static_cast<std::uint8_t>(c));
  }
  return arr;
}

namespace {

void decode_images(const IdxArray& img, const IdxArray& lab, const std::string& what, Matrix& x, Matrix& t,
                   std::vector<std::uint8_t>& labels) {
  if (img.dims.size() != 3 || lab.dims.size() != 1 || img.dims[0] != lab.dims[0]) {
    throw Error(ErrorKind::ShapeMismatch, what + ": image and label counts disagree");
  }
  const Eigen::Index n = img.dims[0];
  const Eigen::Index d = static_cast<Eigen::Index>(img.dims[1]) * img.dims[2];
  x.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = img.data[static_cast<std::size_t>(i * d + j)] / 255.0;
  labels = lab.data;
  t = one_hot(labels, 10);
}

}  // namespace

Dataset load_mnist(const std::string& dir, double subset_fraction, std::uint64_t seed,
                   double validation_fraction) {
  if (!(subset_fraction > 0.0 && subset_fraction <= 1.0)) {
    throw Error(ErrorKind::Config, "subset_fraction must lie in (0, 1]");
  }
  namespace fs = std::filesystem;
  const fs::path root(dir);
  Matrix x, t;
  std::vector<std::uint8_t> labels;
  decode_images(read_idx((root / "train-images-idx3-ubyte").string(), kIdxImagesMagic),
                read_idx((root / "train-labels-idx1-ubyte").string(), kIdxLabelsMagic), "train", x, t, labels);

  Dataset d;
  d.task = TaskKind::softmax_cross_entropy;
  if (subset_fraction < 1.0) {
    std::vector<std::vector<Eigen::Index>> by_class(10);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<Eigen::Index>(i));
    const auto per_class = static_cast<std::size_t>(
        std::floor(subset_fraction * static_cast<double>(labels.size()) / 10.0));
    std::vector<Eigen::Index> keep;
    for (int c = 0; c < 10; ++c) {
      std::mt19937_64 eng(stream_seed(seed, {0x3u, static_cast<std::uint64_t>(c)}));
      std::shuffle(by_class[c].begin(), by_class[c].end(), eng);
      const std::size_t take = std::min(per_class, by_class[c].size());
      keep.insert(keep.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(take));
    }
    std::sort(keep.begin(), keep.end());
    d.inputs = rows_of(x, keep);
    d.targets = rows_of(t, keep);
  } else {
    d.inputs = std::move(x);
    d.targets = std::move(t);
  }

  const fs::path test_images = root / "t10k-images-idx3-ubyte";
  const fs::path test_labels = root / "t10k-labels-idx1-ubyte";
  if (fs::exists(test_images) && fs::exists(test_labels)) {
    std::vector<std::uint8_t> test_lab;
    decode_images(read_idx(test_images.string(), kIdxImagesMagic),
                  read_idx(test_labels.string(), kIdxLabelsMagic), "test", d.test_inputs, d.test_targets,
                  test_lab);
  }
  split_dataset(d, validation_fraction, seed);
  return d;
}

}  // namespace senn
