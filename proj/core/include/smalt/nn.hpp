#pragma once

#include <Eigen/Core>
#include <array>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "smalt/activations.hpp"
#include "smalt/data.hpp"

namespace smalt {

using Mat = Eigen::MatrixXd;

// (height, width, channels); dense layers use (1, 1, units).
using Shape3 = std::array<int, 3>;

inline int shape_size(const Shape3& s) { return s[0] * s[1] * s[2]; }

// Contiguous view of one parameter tensor and its gradient buffer.
struct ParamView {
  double* value;
  double* grad;
  Eigen::Index size;
};

// A network layer. Activations flow as B x D matrices, one flattened sample
// per row, layout (h * W + w) * C + c. Layers cache whatever forward state
// backward needs; backward must follow a training-mode forward of the same
// batch.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string name() const = 0;
  virtual Shape3 output_shape(const Shape3& input) = 0;
  virtual void init_params(const Shape3& input, std::mt19937& rng) {}
  virtual Mat forward(const Mat& x, bool training) = 0;
  virtual Mat backward(const Mat& dy) = 0;
  virtual std::vector<ParamView> params() { return {}; }
};

std::unique_ptr<Layer> make_dense(int in, int out);
std::unique_ptr<Layer> make_conv2d(int kernel_h, int kernel_w, int in_ch,
                                   int out_ch);  // stride 1, same padding
std::unique_ptr<Layer> make_maxpool(int k, int stride);
std::unique_ptr<Layer> make_relu();
std::unique_ptr<Layer> make_dropout(double rate, std::mt19937* rng);
std::unique_ptr<Layer> make_flatten();

struct TrainConfig {
  int epochs = 5;
  int batch_size = 64;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double lr_decay = 0.95;  // multiplicative, per epoch
  double weight_decay = 5e-4;
  unsigned long seed = 1;

  void validate() const;
};

struct EpochRecord {
  int epoch;
  double train_loss;
  double train_accuracy;
  double test_accuracy;
  long wall_ms;
};

class Network {
 public:
  Network(Shape3 input_shape, VariantConfig head);

  void add(std::unique_ptr<Layer> layer);
  // He-uniform initialization of all parameter tensors, seeded.
  void init(unsigned long seed);

  const VariantConfig& head() const { return head_; }
  Shape3 input_shape() const { return input_shape_; }
  int output_size();
  std::mt19937& dropout_rng() { return dropout_rng_; }

  Mat forward(const Mat& x, bool training);
  // Head gradient per the configured variant, chained through the layers.
  // Returns the mean batch loss. Requires a preceding training forward.
  double backward(const Mat& logits, const Eigen::VectorXi& targets);
  // v <- momentum*v - lr*(g + weight_decay*w); w <- w + v; gradients zeroed.
  void sgd_step(double learning_rate, double momentum,
                double weight_decay = 0.0);

  std::vector<ParamView> params();
  Eigen::Index param_count();

  double accuracy(const LabeledBatch& batch, int eval_batch = 256);

 private:
  Shape3 input_shape_;
  VariantConfig head_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<Vec> velocity_;
  std::mt19937 dropout_rng_;
  bool forward_ready_ = false;
};

// Seeded per-epoch shuffle, minibatch SGD with momentum and per-epoch lr
// decay. Deterministic given (seed, config).
std::vector<EpochRecord> train(Network& net, const LabeledBatch& train_set,
                               const LabeledBatch& test_set,
                               const TrainConfig& config);

enum class TopologyName { mnist_table1, mnist_mlp, mnist_table1_reduced };

TopologyName topology_from_string(const std::string& name);
std::string to_string(TopologyName name);

// mnist_table1 is the full 28x28x1 CNN column; mnist_table1_reduced keeps
// its shape at 16 channels with x2 conv repeats; mnist_mlp is 784-256-10.
Network build_topology(TopologyName name, VariantConfig head);

}  // namespace smalt
