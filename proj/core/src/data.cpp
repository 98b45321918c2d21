#include "smalt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace smalt {
namespace {

constexpr std::uint32_t kImageMagic = 2051;
constexpr std::uint32_t kLabelMagic = 2049;

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4)) {
    throw std::runtime_error("I/O error: truncated IDX file: " + path);
  }
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(buf), 4);
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("I/O error: cannot open " + path);
  }
  return in;
}

}  // namespace

void LabeledBatch::validate() const {
  if (features.rows() == 0) {
    throw std::invalid_argument("empty batch");
  }
  if (labels.size() != features.rows()) {
    throw std::invalid_argument("feature/label count mismatch");
  }
  if (!features.allFinite()) {
    throw std::invalid_argument("non-finite feature values");
  }
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw std::invalid_argument("label out of range at row " +
                                  std::to_string(i));
    }
  }
}

Eigen::MatrixXd load_idx_images(const std::string& path,
                                std::array<int, 3>* shape_out) {
  std::ifstream in = open_input(path);
  const std::uint32_t magic = read_be32(in, path);
  if (magic != kImageMagic) {
    throw std::runtime_error("format error: expected image magic 2051, got " +
                             std::to_string(magic) + " in " + path);
  }
  const std::uint32_t n = read_be32(in, path);
  const std::uint32_t h = read_be32(in, path);
  const std::uint32_t w = read_be32(in, path);
  const std::size_t count = std::size_t(n) * h * w;
  std::vector<unsigned char> bytes(count);
  if (!in.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(count))) {
    throw std::runtime_error("I/O error: truncated IDX payload: " + path);
  }
  Eigen::MatrixXd out(n, h * w);
  for (std::uint32_t r = 0; r < n; ++r) {
    for (std::uint32_t c = 0; c < h * w; ++c) {
      out(r, c) = bytes[std::size_t(r) * h * w + c] / 255.0;
    }
  }
  if (shape_out) {
    *shape_out = {static_cast<int>(h), static_cast<int>(w), 1};
  }
  return out;
}

Eigen::VectorXi load_idx_labels(const std::string& path, int num_classes) {
  std::ifstream in = open_input(path);
  const std::uint32_t magic = read_be32(in, path);
  if (magic != kLabelMagic) {
    throw std::runtime_error("format error: expected label magic 2049, got " +
                             std::to_string(magic) + " in " + path);
  }
  const std::uint32_t n = read_be32(in, path);
  std::vector<unsigned char> bytes(n);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), n)) {
    throw std::runtime_error("I/O error: truncated IDX payload: " + path);
  }
  Eigen::VectorXi out(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (bytes[i] >= num_classes) {
      throw std::out_of_range("label value " + std::to_string(bytes[i]) +
                              " out of range [0, " +
                              std::to_string(num_classes) + ") in " + path);
    }
    out[i] = bytes[i];
  }
  return out;
}

void save_idx_images(const std::string& path, const Eigen::MatrixXd& images,
                     int height, int width) {
  if (images.cols() != Eigen::Index(height) * width) {
    throw std::invalid_argument("image column count does not match H*W");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("I/O error: cannot write " + path);
  write_be32(out, kImageMagic);
  write_be32(out, static_cast<std::uint32_t>(images.rows()));
  write_be32(out, static_cast<std::uint32_t>(height));
  write_be32(out, static_cast<std::uint32_t>(width));
  for (Eigen::Index r = 0; r < images.rows(); ++r) {
    for (Eigen::Index c = 0; c < images.cols(); ++c) {
      const double v = images(r, c) * 255.0;
      out.put(static_cast<char>(
          static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 255.0)))));
    }
  }
  if (!out) throw std::runtime_error("I/O error writing " + path);
}

void save_idx_labels(const std::string& path, const Eigen::VectorXi& labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("I/O error: cannot write " + path);
  write_be32(out, kLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    out.put(static_cast<char>(static_cast<unsigned char>(labels[i])));
  }
  if (!out) throw std::runtime_error("I/O error writing " + path);
}

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in = open_input(path);
  std::uint64_t h = 14695981039346656037ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (in.eof()) break;
  }
  return h;
}

MnistData load_mnist(const std::string& root) {
  const std::string train_images = root + "/train-images-idx3-ubyte";
  const std::string train_labels = root + "/train-labels-idx1-ubyte";
  const std::string test_images = root + "/t10k-images-idx3-ubyte";
  const std::string test_labels = root + "/t10k-labels-idx1-ubyte";

  MnistData d;
  d.train.features = load_idx_images(train_images, &d.train.shape);
  d.train.labels = load_idx_labels(train_labels);
  d.train.num_classes = 10;
  d.test.features = load_idx_images(test_images, &d.test.shape);
  d.test.labels = load_idx_labels(test_labels);
  d.test.num_classes = 10;
  d.train.validate();
  d.test.validate();

  d.meta.name = "mnist";
  d.meta.n_train = d.train.size();
  d.meta.n_test = d.test.size();
  d.meta.num_classes = 10;
  d.meta.shape = d.train.shape;
  d.meta.source_checksum =
      fnv1a_file(train_images) ^ (fnv1a_file(test_images) * 31);
  return d;
}

LabeledBatch subset(const LabeledBatch& batch, Eigen::Index n,
                    unsigned long seed) {
  batch.validate();
  if (n > batch.size()) {
    throw std::invalid_argument("subset size exceeds batch size");
  }
  const Eigen::Index total = batch.size();

  std::vector<std::vector<Eigen::Index>> by_class(batch.num_classes);
  for (Eigen::Index i = 0; i < total; ++i) {
    by_class[batch.labels[i]].push_back(i);
  }

  // Per-class quotas: floor of the proportional share, remainder assigned by
  // largest fractional part (class index breaks ties).
  std::vector<Eigen::Index> quota(by_class.size());
  std::vector<std::pair<double, int>> frac;
  Eigen::Index assigned = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const double share =
        static_cast<double>(n) * by_class[c].size() / total;
    quota[c] = static_cast<Eigen::Index>(share);
    assigned += quota[c];
    frac.push_back({share - static_cast<double>(quota[c]), static_cast<int>(c)});
  }
  std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) {
    quota[frac[i % frac.size()].second] += 1;
  }

  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::vector<Eigen::Index> picked;
  picked.reserve(n);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
    picked.insert(picked.end(), by_class[c].begin(),
                  by_class[c].begin() + quota[c]);
  }
  std::shuffle(picked.begin(), picked.end(), rng);

  LabeledBatch out;
  out.shape = batch.shape;
  out.num_classes = batch.num_classes;
  out.features.resize(n, batch.features.cols());
  out.labels.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.features.row(i) = batch.features.row(picked[i]);
    out.labels[i] = batch.labels[picked[i]];
  }
  return out;
}

Blobs make_blobs(int num_classes, int per_class, int dim, double separation,
                 unsigned long seed) {
  if (num_classes < 2) throw std::invalid_argument("need K >= 2 classes");
  if (per_class < 2 || dim < 1) {
    throw std::invalid_argument("need per_class >= 2 and dim >= 1");
  }
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::normal_distribution<double> unit(0.0, 1.0);

  // Class means on scaled coordinate axes; for K <= dim all pairwise
  // distances equal `separation` exactly.
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(num_classes, dim);
  const double scale = separation / std::sqrt(2.0);
  for (int c = 0; c < num_classes; ++c) {
    means(c, c % dim) = scale * (1.0 + c / dim);
  }

  const int n_train = (per_class * 4) / 5;
  const int n_test = per_class - n_train;
  Blobs out;
  auto init = [&](LabeledBatch& b, int per) {
    b.features.resize(static_cast<Eigen::Index>(per) * num_classes, dim);
    b.labels.resize(static_cast<Eigen::Index>(per) * num_classes);
    b.shape = {1, 1, dim};
    b.num_classes = num_classes;
  };
  init(out.train, n_train);
  init(out.test, n_test);

  Eigen::Index ti = 0, si = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      Eigen::RowVectorXd x(dim);
      for (int d = 0; d < dim; ++d) x[d] = means(c, d) + unit(rng);
      if (i < n_train) {
        out.train.features.row(ti) = x;
        out.train.labels[ti++] = c;
      } else {
        out.test.features.row(si) = x;
        out.test.labels[si++] = c;
      }
    }
  }
  return out;
}

}  // namespace smalt
