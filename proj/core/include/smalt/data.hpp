#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace smalt {

// Features as one flattened sample per row (layout (h * W + w) * C + c for
// images), labels as class indices.
struct LabeledBatch {
  Eigen::MatrixXd features;  // N x D
  Eigen::VectorXi labels;    // N
  std::array<int, 3> shape{1, 1, 0};  // (H, W, C) of one sample
  int num_classes = 0;

  Eigen::Index size() const { return features.rows(); }
  void validate() const;
};

struct DatasetMeta {
  std::string name;
  Eigen::Index n_train = 0;
  Eigen::Index n_test = 0;
  int num_classes = 0;
  std::array<int, 3> shape{1, 1, 0};
  std::uint64_t source_checksum = 0;  // FNV-1a over the raw image files
};

// IDX container parsing (big-endian magic, dimension header, byte payload).
// Images: magic 2051, dims N x H x W, pixels scaled to [0,1] by /255.
// Labels: magic 2049, dims N, values checked against num_classes.
Eigen::MatrixXd load_idx_images(const std::string& path, std::array<int, 3>* shape_out = nullptr);
Eigen::VectorXi load_idx_labels(const std::string& path, int num_classes = 10);

// Writers for the same format; pixels are rounded back to bytes (inputs must
// already be multiples of 1/255 for an exact round trip).
void save_idx_images(const std::string& path, const Eigen::MatrixXd& images,
                     int height, int width);
void save_idx_labels(const std::string& path, const Eigen::VectorXi& labels);

std::uint64_t fnv1a_file(const std::string& path);

// Loads <root>/{train-images,train-labels,t10k-images,t10k-labels}-idx*-ubyte
// into train/test batches; meta_out gets counts and a checksum over the two
// image files.
struct MnistData {
  LabeledBatch train;
  LabeledBatch test;
  DatasetMeta meta;
};
MnistData load_mnist(const std::string& root);

// Stratified sample of n items preserving per-class proportions within one
// item; seeded and deterministic.
LabeledBatch subset(const LabeledBatch& batch, Eigen::Index n,
                    unsigned long seed);

// K unit-variance Gaussian clusters with means `separation` apart; 80/20
// train/test split, stratified, seeded.
struct Blobs {
  LabeledBatch train;
  LabeledBatch test;
};
Blobs make_blobs(int num_classes, int per_class, int dim, double separation,
                 unsigned long seed);

}  // namespace smalt
