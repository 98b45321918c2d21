#include "smalt/nn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "smalt/losses.hpp"

namespace smalt {
namespace {

void check_input_shape(const Shape3& expected, Eigen::Index cols,
                       const std::string& who) {
  if (cols != shape_size(expected)) {
    throw std::invalid_argument(who + ": input has " + std::to_string(cols) +
                                " features, expected " +
                                std::to_string(shape_size(expected)));
  }
}

void he_uniform(double* data, Eigen::Index size, int fan_in,
                std::mt19937& rng) {
  const double limit = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < size; ++i) data[i] = dist(rng);
}

class Dense final : public Layer {
 public:
  Dense(int in, int out) : in_(in), out_(out) {
    if (in < 1 || out < 1) throw std::invalid_argument("dense: bad sizes");
  }

  std::string name() const override {
    return "dense(" + std::to_string(in_) + "," + std::to_string(out_) + ")";
  }

  Shape3 output_shape(const Shape3& input) override {
    if (shape_size(input) != in_) {
      throw std::invalid_argument(name() + ": incompatible input shape");
    }
    return {1, 1, out_};
  }

  void init_params(const Shape3& input, std::mt19937& rng) override {
    output_shape(input);
    w_.resize(in_, out_);
    b_ = Vec::Zero(out_);
    dw_ = Mat::Zero(in_, out_);
    db_ = Vec::Zero(out_);
    he_uniform(w_.data(), w_.size(), in_, rng);
  }

  Mat forward(const Mat& x, bool training) override {
    check_input_shape({1, 1, in_}, x.cols(), name());
    if (training) x_ = x;
    return (x * w_).rowwise() + b_.transpose();
  }

  Mat backward(const Mat& dy) override {
    dw_ += x_.transpose() * dy;
    db_ += dy.colwise().sum().transpose();
    return dy * w_.transpose();
  }

  std::vector<ParamView> params() override {
    return {{w_.data(), dw_.data(), w_.size()},
            {b_.data(), db_.data(), b_.size()}};
  }

 private:
  int in_, out_;
  Mat w_, dw_;
  Vec b_, db_;
  Mat x_;
};

// Stride-1 "same"-padded convolution via im2col + matmul. The column matrix
// is recomputed in backward instead of cached, trading flops for memory.
class Conv2d final : public Layer {
 public:
  Conv2d(int kh, int kw, int in_ch, int out_ch)
      : kh_(kh), kw_(kw), in_ch_(in_ch), out_ch_(out_ch) {
    if (kh < 1 || kw < 1 || in_ch < 1 || out_ch < 1) {
      throw std::invalid_argument("conv2d: bad sizes");
    }
  }

  std::string name() const override {
    return "conv2d(" + std::to_string(kh_) + "x" + std::to_string(kw_) + "," +
           std::to_string(out_ch_) + ")";
  }

  Shape3 output_shape(const Shape3& input) override {
    if (input[2] != in_ch_) {
      throw std::invalid_argument(name() + ": expected " +
                                  std::to_string(in_ch_) + " input channels");
    }
    return {input[0], input[1], out_ch_};
  }

  void init_params(const Shape3& input, std::mt19937& rng) override {
    output_shape(input);
    h_ = input[0];
    w_img_ = input[1];
    const int fan_in = kh_ * kw_ * in_ch_;
    w_.resize(fan_in, out_ch_);
    b_ = Vec::Zero(out_ch_);
    dw_ = Mat::Zero(fan_in, out_ch_);
    db_ = Vec::Zero(out_ch_);
    he_uniform(w_.data(), w_.size(), fan_in, rng);
  }

  Mat forward(const Mat& x, bool training) override {
    check_input_shape({h_, w_img_, in_ch_}, x.cols(), name());
    if (training) x_ = x;
    const Eigen::Index batch = x.rows();
    Mat y(batch, static_cast<Eigen::Index>(h_) * w_img_ * out_ch_);
    Mat col(static_cast<Eigen::Index>(h_) * w_img_, kh_ * kw_ * in_ch_);
    for (Eigen::Index s = 0; s < batch; ++s) {
      im2col(x.row(s), col);
      Mat out = col * w_;  // (H*W) x out_ch
      out.rowwise() += b_.transpose();
      for (int p = 0; p < h_ * w_img_; ++p) {
        for (int c = 0; c < out_ch_; ++c) {
          y(s, static_cast<Eigen::Index>(p) * out_ch_ + c) = out(p, c);
        }
      }
    }
    return y;
  }

  Mat backward(const Mat& dy) override {
    if (x_.rows() == 0) throw std::logic_error(name() + ": backward before forward");
    const Eigen::Index batch = dy.rows();
    Mat dx = Mat::Zero(batch, x_.cols());
    Mat col(static_cast<Eigen::Index>(h_) * w_img_, kh_ * kw_ * in_ch_);
    Mat dy_s(static_cast<Eigen::Index>(h_) * w_img_, out_ch_);
    for (Eigen::Index s = 0; s < batch; ++s) {
      for (int p = 0; p < h_ * w_img_; ++p) {
        for (int c = 0; c < out_ch_; ++c) {
          dy_s(p, c) = dy(s, static_cast<Eigen::Index>(p) * out_ch_ + c);
        }
      }
      im2col(x_.row(s), col);
      dw_ += col.transpose() * dy_s;
      db_ += dy_s.colwise().sum().transpose();
      Mat dcol = dy_s * w_.transpose();  // (H*W) x (kh*kw*in_ch)
      col2im_add(dcol, dx.row(s));
    }
    return dx;
  }

  std::vector<ParamView> params() override {
    return {{w_.data(), dw_.data(), w_.size()},
            {b_.data(), db_.data(), b_.size()}};
  }

 private:
  // Layout: pixel index p = h*W + w; feature index (kh*kw + kpos)*in_ch + c.
  using StridedRow =
      Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;
  using ConstStridedRow =
      Eigen::Ref<const Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

  void im2col(const ConstStridedRow& x, Mat& col) const {
    const int pad_h = (kh_ - 1) / 2;
    const int pad_w = (kw_ - 1) / 2;
    col.setZero();
    for (int oh = 0; oh < h_; ++oh) {
      for (int ow = 0; ow < w_img_; ++ow) {
        const Eigen::Index row = static_cast<Eigen::Index>(oh) * w_img_ + ow;
        for (int dh = 0; dh < kh_; ++dh) {
          const int ih = oh + dh - pad_h;
          if (ih < 0 || ih >= h_) continue;
          for (int dw = 0; dw < kw_; ++dw) {
            const int iw = ow + dw - pad_w;
            if (iw < 0 || iw >= w_img_) continue;
            const Eigen::Index src =
                (static_cast<Eigen::Index>(ih) * w_img_ + iw) * in_ch_;
            const Eigen::Index dst =
                (static_cast<Eigen::Index>(dh) * kw_ + dw) * in_ch_;
            for (int c = 0; c < in_ch_; ++c) col(row, dst + c) = x[src + c];
          }
        }
      }
    }
  }

  void col2im_add(const Mat& dcol, StridedRow dx) const {
    const int pad_h = (kh_ - 1) / 2;
    const int pad_w = (kw_ - 1) / 2;
    for (int oh = 0; oh < h_; ++oh) {
      for (int ow = 0; ow < w_img_; ++ow) {
        const Eigen::Index row = static_cast<Eigen::Index>(oh) * w_img_ + ow;
        for (int dh = 0; dh < kh_; ++dh) {
          const int ih = oh + dh - pad_h;
          if (ih < 0 || ih >= h_) continue;
          for (int dw = 0; dw < kw_; ++dw) {
            const int iw = ow + dw - pad_w;
            if (iw < 0 || iw >= w_img_) continue;
            const Eigen::Index dst =
                (static_cast<Eigen::Index>(ih) * w_img_ + iw) * in_ch_;
            const Eigen::Index src =
                (static_cast<Eigen::Index>(dh) * kw_ + dw) * in_ch_;
            for (int c = 0; c < in_ch_; ++c) dx[dst + c] += dcol(row, src + c);
          }
        }
      }
    }
  }

  int kh_, kw_, in_ch_, out_ch_;
  int h_ = 0, w_img_ = 0;
  Mat w_, dw_;
  Vec b_, db_;
  Mat x_;
};

class MaxPool final : public Layer {
 public:
  MaxPool(int k, int stride) : k_(k), stride_(stride) {
    if (k < 1 || stride < 1) throw std::invalid_argument("maxpool: bad sizes");
  }

  std::string name() const override {
    return "maxpool(" + std::to_string(k_) + "," + std::to_string(stride_) +
           ")";
  }

  Shape3 output_shape(const Shape3& input) override {
    if (input[0] < k_ || input[1] < k_) {
      throw std::invalid_argument(name() + ": input smaller than kernel");
    }
    return {(input[0] - k_) / stride_ + 1, (input[1] - k_) / stride_ + 1,
            input[2]};
  }

  void init_params(const Shape3& input, std::mt19937&) override {
    in_ = input;
    out_ = output_shape(input);
  }

  Mat forward(const Mat& x, bool training) override {
    check_input_shape(in_, x.cols(), name());
    const Eigen::Index batch = x.rows();
    const Eigen::Index out_size = shape_size(out_);
    Mat y(batch, out_size);
    if (training) {
      argmax_.resize(batch, out_size);
      in_cols_ = x.cols();
    }
    const int ch = in_[2];
    for (Eigen::Index s = 0; s < batch; ++s) {
      for (int oh = 0; oh < out_[0]; ++oh) {
        for (int ow = 0; ow < out_[1]; ++ow) {
          for (int c = 0; c < ch; ++c) {
            double best = -std::numeric_limits<double>::infinity();
            Eigen::Index best_idx = 0;
            for (int dh = 0; dh < k_; ++dh) {
              for (int dw = 0; dw < k_; ++dw) {
                const Eigen::Index idx =
                    (static_cast<Eigen::Index>(oh * stride_ + dh) * in_[1] +
                     (ow * stride_ + dw)) *
                        ch +
                    c;
                if (x(s, idx) > best) {
                  best = x(s, idx);
                  best_idx = idx;
                }
              }
            }
            const Eigen::Index out_idx =
                (static_cast<Eigen::Index>(oh) * out_[1] + ow) * ch + c;
            y(s, out_idx) = best;
            if (training) argmax_(s, out_idx) = best_idx;
          }
        }
      }
    }
    return y;
  }

  Mat backward(const Mat& dy) override {
    if (argmax_.rows() != dy.rows()) {
      throw std::logic_error(name() + ": backward before forward");
    }
    Mat dx = Mat::Zero(dy.rows(), in_cols_);
    for (Eigen::Index s = 0; s < dy.rows(); ++s) {
      for (Eigen::Index i = 0; i < dy.cols(); ++i) {
        dx(s, argmax_(s, i)) += dy(s, i);
      }
    }
    return dx;
  }

 private:
  int k_, stride_;
  Shape3 in_{}, out_{};
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> argmax_;
  Eigen::Index in_cols_ = 0;
};

class Relu final : public Layer {
 public:
  std::string name() const override { return "relu"; }
  Shape3 output_shape(const Shape3& input) override { return input; }

  Mat forward(const Mat& x, bool training) override {
    Mat y = x.cwiseMax(0.0);
    if (training) mask_ = (x.array() > 0.0).cast<double>();
    return y;
  }

  Mat backward(const Mat& dy) override {
    if (mask_.rows() != dy.rows()) {
      throw std::logic_error("relu: backward before forward");
    }
    return dy.cwiseProduct(mask_);
  }

 private:
  Mat mask_;
};

class Dropout final : public Layer {
 public:
  Dropout(double rate, std::mt19937* rng) : rate_(rate), rng_(rng) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw std::invalid_argument("dropout rate must be in [0, 1)");
    }
  }

  std::string name() const override { return "dropout"; }
  Shape3 output_shape(const Shape3& input) override { return input; }

  Mat forward(const Mat& x, bool training) override {
    if (!training || rate_ == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - rate_);
    mask_.resize(x.rows(), x.cols());
    const double scale = 1.0 / (1.0 - rate_);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        mask_(i, j) = keep(*rng_) ? scale : 0.0;
      }
    }
    return x.cwiseProduct(mask_);
  }

  Mat backward(const Mat& dy) override {
    if (rate_ == 0.0) return dy;
    if (mask_.rows() != dy.rows()) {
      throw std::logic_error("dropout: backward before forward");
    }
    return dy.cwiseProduct(mask_);
  }

 private:
  double rate_;
  std::mt19937* rng_;
  Mat mask_;
};

class Flatten final : public Layer {
 public:
  std::string name() const override { return "flatten"; }
  Shape3 output_shape(const Shape3& input) override {
    return {1, 1, shape_size(input)};
  }
  Mat forward(const Mat& x, bool) override { return x; }
  Mat backward(const Mat& dy) override { return dy; }
};

}  // namespace

std::unique_ptr<Layer> make_dense(int in, int out) {
  return std::make_unique<Dense>(in, out);
}
std::unique_ptr<Layer> make_conv2d(int kernel_h, int kernel_w, int in_ch,
                                   int out_ch) {
  return std::make_unique<Conv2d>(kernel_h, kernel_w, in_ch, out_ch);
}
std::unique_ptr<Layer> make_maxpool(int k, int stride) {
  return std::make_unique<MaxPool>(k, stride);
}
std::unique_ptr<Layer> make_relu() { return std::make_unique<Relu>(); }
std::unique_ptr<Layer> make_dropout(double rate, std::mt19937* rng) {
  return std::make_unique<Dropout>(rate, rng);
}
std::unique_ptr<Layer> make_flatten() { return std::make_unique<Flatten>(); }

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("learning_rate must be > 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("momentum must be in [0, 1)");
  }
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) {
    throw std::invalid_argument("lr_decay must be in (0, 1]");
  }
  if (!(weight_decay >= 0.0)) {
    throw std::invalid_argument("weight_decay must be >= 0");
  }
}

Network::Network(Shape3 input_shape, VariantConfig head)
    : input_shape_(input_shape), head_(std::move(head)) {}

void Network::add(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
}

void Network::init(unsigned long seed) {
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  Shape3 cur = input_shape_;
  for (auto& layer : layers_) {
    layer->init_params(cur, rng);
    cur = layer->output_shape(cur);
  }
  dropout_rng_.seed(static_cast<std::uint32_t>(seed) + 0x9e3779b9u);
  velocity_.clear();
  for (const ParamView& p : params()) {
    velocity_.push_back(Vec::Zero(p.size));
  }
}

int Network::output_size() {
  Shape3 cur = input_shape_;
  for (const auto& layer : layers_) cur = layer->output_shape(cur);
  return shape_size(cur);
}

Mat Network::forward(const Mat& x, bool training) {
  check_input_shape(input_shape_, x.cols(), "network");
  Mat cur = x;
  for (auto& layer : layers_) cur = layer->forward(cur, training);
  forward_ready_ = training;
  return cur;
}

double Network::backward(const Mat& logits, const Eigen::VectorXi& targets) {
  if (!forward_ready_) {
    throw std::logic_error("backward called without a training-mode forward");
  }
  forward_ready_ = false;
  BatchLossGrad head = ce_loss_batch(logits, targets, head_);
  Mat dy = head.grad;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    dy = (*it)->backward(dy);
  }
  return head.loss;
}

void Network::sgd_step(double learning_rate, double momentum,
                       double weight_decay) {
  std::vector<ParamView> ps = params();
  if (velocity_.size() != ps.size()) {
    throw std::logic_error("sgd_step before init");
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Eigen::Map<Vec> w(ps[i].value, ps[i].size);
    Eigen::Map<Vec> g(ps[i].grad, ps[i].size);
    if (weight_decay != 0.0) {
      velocity_[i] =
          momentum * velocity_[i] - learning_rate * (g + weight_decay * w);
    } else {
      velocity_[i] = momentum * velocity_[i] - learning_rate * g;
    }
    w += velocity_[i];
    g.setZero();
  }
}

std::vector<ParamView> Network::params() {
  std::vector<ParamView> out;
  for (auto& layer : layers_) {
    for (const ParamView& p : layer->params()) out.push_back(p);
  }
  return out;
}

Eigen::Index Network::param_count() {
  Eigen::Index n = 0;
  for (const ParamView& p : params()) n += p.size;
  return n;
}

double Network::accuracy(const LabeledBatch& batch, int eval_batch) {
  Eigen::Index correct = 0;
  for (Eigen::Index start = 0; start < batch.size(); start += eval_batch) {
    const Eigen::Index count = std::min<Eigen::Index>(eval_batch, batch.size() - start);
    Mat logits = forward(batch.features.middleRows(start, count), false);
    for (Eigen::Index r = 0; r < count; ++r) {
      if (predict(logits.row(r).transpose(), head_) ==
          batch.labels[start + r]) {
        ++correct;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(batch.size());
}

std::vector<EpochRecord> train(Network& net, const LabeledBatch& train_set,
                               const LabeledBatch& test_set,
                               const TrainConfig& config) {
  config.validate();
  train_set.validate();
  test_set.validate();
  if (train_set.num_classes != net.output_size()) {
    throw std::invalid_argument("class count does not match network head");
  }

  std::mt19937 shuffle_rng(static_cast<std::uint32_t>(config.seed));
  std::vector<Eigen::Index> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<EpochRecord> records;
  double lr = config.learning_rate;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index start = 0; start < train_set.size();
         start += config.batch_size) {
      const Eigen::Index count =
          std::min<Eigen::Index>(config.batch_size, train_set.size() - start);
      Mat x(count, train_set.features.cols());
      Eigen::VectorXi y(count);
      for (Eigen::Index i = 0; i < count; ++i) {
        x.row(i) = train_set.features.row(order[start + i]);
        y[i] = train_set.labels[order[start + i]];
      }
      Mat logits = net.forward(x, true);
      loss_sum += net.backward(logits, y) * static_cast<double>(count);
      seen += count;
      net.sgd_step(lr, config.momentum, config.weight_decay);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = net.accuracy(train_set);
    rec.test_accuracy = net.accuracy(test_set);
    rec.wall_ms = static_cast<long>(
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - t0)
            .count());
    records.push_back(rec);
    lr *= config.lr_decay;
  }
  return records;
}

TopologyName topology_from_string(const std::string& name) {
  if (name == "mnist_table1") return TopologyName::mnist_table1;
  if (name == "mnist_mlp") return TopologyName::mnist_mlp;
  if (name == "mnist_table1_reduced") return TopologyName::mnist_table1_reduced;
  throw std::invalid_argument("unknown topology: " + name);
}

std::string to_string(TopologyName name) {
  switch (name) {
    case TopologyName::mnist_table1: return "mnist_table1";
    case TopologyName::mnist_mlp: return "mnist_mlp";
    case TopologyName::mnist_table1_reduced: return "mnist_table1_reduced";
  }
  throw std::logic_error("unreachable");
}

Network build_topology(TopologyName name, VariantConfig head) {
  Network net({28, 28, 1}, std::move(head));
  auto conv_block = [&net](int repeats, int in_ch, int ch) {
    for (int i = 0; i < repeats; ++i) {
      net.add(make_conv2d(3, 3, i == 0 ? in_ch : ch, ch));
      net.add(make_relu());
    }
  };
  switch (name) {
    case TopologyName::mnist_mlp:
      net.add(make_flatten());
      net.add(make_dense(784, 256));
      net.add(make_relu());
      net.add(make_dense(256, 10));
      break;
    case TopologyName::mnist_table1:
      conv_block(4, 1, 64);
      net.add(make_maxpool(2, 2));
      conv_block(3, 64, 64);
      net.add(make_maxpool(2, 2));
      conv_block(3, 64, 64);
      net.add(make_maxpool(2, 2));
      net.add(make_flatten());
      net.add(make_dense(3 * 3 * 64, 256));
      net.add(make_relu());
      net.add(make_dense(256, 10));
      break;
    case TopologyName::mnist_table1_reduced:
      conv_block(2, 1, 16);
      net.add(make_maxpool(2, 2));
      conv_block(2, 16, 16);
      net.add(make_maxpool(2, 2));
      conv_block(2, 16, 16);
      net.add(make_maxpool(2, 2));
      net.add(make_flatten());
      net.add(make_dense(3 * 3 * 16, 256));
      net.add(make_relu());
      net.add(make_dense(256, 10));
      break;
  }
  return net;
}

}  // namespace smalt
