#pragma once

#include "smoothrl/autodiff.hpp"
#include "smoothrl/common.hpp"

#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

namespace smoothrl {

class Mlp;

/// Per-layer gradient accumulator matching an Mlp's shapes.
struct MlpGrads {
  std::vector<Mat> w;
  std::vector<Vec> b;

  void set_zero() {
    for (auto& m : w) m.setZero();
    for (auto& v : b) v.setZero();
  }
};

/// Fully connected network with tanh hidden layers and an identity output
/// layer. Weights are applied as y = W x + b with W of shape (out, in).
///
/// Besides plain evaluation the class exposes exact reverse-mode (backward)
/// and forward-mode (jvp_params) sweeps fused at layer granularity, operating
/// on column-batched inputs, and can also unroll itself onto a scalar Tape;
/// the two paths produce identical derivatives and are tested against each
/// other.
///
/// Flat parameter layout: for each layer in order, the weight matrix in
/// row-major order followed by the bias vector.
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
    if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
    for (int n : sizes_) {
      if (n <= 0) throw std::invalid_argument("Mlp: layer sizes must be positive");
    }
    const size_t layers = sizes_.size() - 1;
    w_.resize(layers);
    b_.resize(layers);
    for (size_t l = 0; l < layers; ++l) {
      w_[l] = Mat::Zero(sizes_[l + 1], sizes_[l]);
      b_[l] = Vec::Zero(sizes_[l + 1]);
    }
  }

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  size_t num_layers() const { return w_.size(); }
  const Mat& weights(size_t l) const { return w_[l]; }
  const Vec& biases(size_t l) const { return b_[l]; }
  Mat& weights(size_t l) { return w_[l]; }
  Vec& biases(size_t l) { return b_[l]; }

  int param_count() const {
    int n = 0;
    for (size_t l = 0; l < w_.size(); ++l) n += static_cast<int>(w_[l].size() + b_[l].size());
    return n;
  }

  /// Uniform init in [-a, a] with a = sqrt(6 / (fan_in + fan_out)); draws are
  /// consumed layer by layer, weights in row-major order, then biases.
  void init_uniform(Rng& rng) {
    for (size_t l = 0; l < w_.size(); ++l) {
      const double a = std::sqrt(6.0 / (sizes_[l] + sizes_[l + 1]));
      for (Eigen::Index r = 0; r < w_[l].rows(); ++r)
        for (Eigen::Index c = 0; c < w_[l].cols(); ++c) w_[l](r, c) = rng.uniform(-a, a);
      for (Eigen::Index r = 0; r < b_[l].size(); ++r) b_[l][r] = rng.uniform(-a, a);
    }
  }

  MlpGrads make_grads() const {
    MlpGrads g;
    g.w.reserve(w_.size());
    g.b.reserve(b_.size());
    for (size_t l = 0; l < w_.size(); ++l) {
      g.w.push_back(Mat::Zero(w_[l].rows(), w_[l].cols()));
      g.b.push_back(Vec::Zero(b_[l].size()));
    }
    return g;
  }

  Vec params() const {
    Vec p(param_count());
    int off = 0;
    for (size_t l = 0; l < w_.size(); ++l) {
      for (Eigen::Index r = 0; r < w_[l].rows(); ++r)
        for (Eigen::Index c = 0; c < w_[l].cols(); ++c) p[off++] = w_[l](r, c);
      for (Eigen::Index r = 0; r < b_[l].size(); ++r) p[off++] = b_[l][r];
    }
    return p;
  }

  void set_params(const Vec& p) {
    if (p.size() != param_count()) throw std::invalid_argument("Mlp::set_params: size mismatch");
    int off = 0;
    for (size_t l = 0; l < w_.size(); ++l) {
      for (Eigen::Index r = 0; r < w_[l].rows(); ++r)
        for (Eigen::Index c = 0; c < w_[l].cols(); ++c) w_[l](r, c) = p[off++];
      for (Eigen::Index r = 0; r < b_[l].size(); ++r) b_[l][r] = p[off++];
    }
  }

  /// theta += scale * direction (flat layout).
  void add_flat(const Vec& direction, double scale) {
    if (direction.size() != param_count()) throw std::invalid_argument("Mlp::add_flat: size mismatch");
    int off = 0;
    for (size_t l = 0; l < w_.size(); ++l) {
      for (Eigen::Index r = 0; r < w_[l].rows(); ++r)
        for (Eigen::Index c = 0; c < w_[l].cols(); ++c) w_[l](r, c) += scale * direction[off++];
      for (Eigen::Index r = 0; r < b_[l].size(); ++r) b_[l][r] += scale * direction[off++];
    }
  }

  Vec flatten(const MlpGrads& g) const {
    Vec p(param_count());
    int off = 0;
    for (size_t l = 0; l < w_.size(); ++l) {
      for (Eigen::Index r = 0; r < g.w[l].rows(); ++r)
        for (Eigen::Index c = 0; c < g.w[l].cols(); ++c) p[off++] = g.w[l](r, c);
      for (Eigen::Index r = 0; r < g.b[l].size(); ++r) p[off++] = g.b[l][r];
    }
    return p;
  }

  // --- evaluation -------------------------------------------------------

  struct Cache {
    std::vector<Mat> act;  // act[0] = input, act[l] = activation of layer l
  };

  /// Batched forward over column vectors; records activations for backward.
  const Mat& forward(const Mat& x, Cache& cache) const {
    check_input(static_cast<int>(x.rows()));
    cache.act.resize(w_.size() + 1);
    cache.act[0] = x;
    for (size_t l = 0; l < w_.size(); ++l) {
      Mat z = (w_[l] * cache.act[l]).colwise() + b_[l];
      if (l != w_.size() - 1) z = z.array().tanh();
      cache.act[l + 1] = std::move(z);
    }
    return cache.act.back();
  }

  Mat forward(const Mat& x) const {
    Cache c;
    return forward(x, c);
  }

  Vec forward(const Vec& x) const {
    check_input(static_cast<int>(x.size()));
    Vec a = x;
    for (size_t l = 0; l < w_.size(); ++l) {
      Vec z = w_[l] * a + b_[l];
      if (l != w_.size() - 1) z = z.array().tanh();
      a = std::move(z);
    }
    return a;
  }

  Vec forward(const Vec& x, Cache& cache) const {
    const Mat y = forward(Mat(x), cache);
    return y.col(0);
  }

  /// Reverse sweep. `dy` holds the adjoint of the output (one column per
  /// batch element); parameter gradients are accumulated (+=) into `grads`
  /// (summed over the batch), and the adjoint of the input is written to
  /// `dx` when non-null.
  void backward(const Cache& cache, const Mat& dy, MlpGrads* grads, Mat* dx) const {
    Mat g = dy;  // adjoint of current layer's activation
    for (size_t l = w_.size(); l-- > 0;) {
      // Output layer is linear; hidden layers apply tanh whose derivative is
      // recoverable from the stored activation.
      if (grads) {
        grads->w[l].noalias() += g * cache.act[l].transpose();
        grads->b[l].noalias() += g.rowwise().sum();
      }
      if (l > 0 || dx) {
        Mat gin = w_[l].transpose() * g;
        if (l > 0) gin.array() *= 1.0 - cache.act[l].array().square();
        g = std::move(gin);
      }
    }
    if (dx) *dx = std::move(g);
  }

  void backward(const Cache& cache, const Vec& dy, MlpGrads* grads, Vec* dx) const {
    Mat dxm;
    backward(cache, Mat(dy), grads, dx ? &dxm : nullptr);
    if (dx) *dx = dxm.col(0);
  }

  /// Forward-mode tangent of the output with respect to a flat parameter
  /// direction, holding the input fixed. Exact; used for Fisher-vector
  /// products.
  Mat jvp_params(const Cache& cache, const Vec& direction) const {
    if (direction.size() != param_count()) throw std::invalid_argument("Mlp::jvp_params: size mismatch");
    const Eigen::Index n = cache.act[0].cols();
    Mat da = Mat::Zero(sizes_[0], n);
    int off = 0;
    for (size_t l = 0; l < w_.size(); ++l) {
      using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
      RowMajorMap dw(direction.data() + off, w_[l].rows(), w_[l].cols());
      off += static_cast<int>(w_[l].size());
      Eigen::Map<const Vec> db(direction.data() + off, b_[l].size());
      off += static_cast<int>(b_[l].size());
      Mat dz = (dw * cache.act[l] + w_[l] * da).colwise() + db;
      if (l != w_.size() - 1) dz.array() *= 1.0 - cache.act[l + 1].array().square();
      da = std::move(dz);
    }
    return da;
  }

  // --- tape construction --------------------------------------------------

  /// Unrolls the network onto a tape with the inputs as differentiable leaves
  /// and parameters folded in as constants.
  std::vector<Var> forward_on_tape(Tape& t, std::span<const Var> x) const {
    check_input(static_cast<int>(x.size()));
    std::vector<Var> act(x.begin(), x.end());
    for (size_t l = 0; l < w_.size(); ++l) {
      std::vector<Var> next(static_cast<size_t>(sizes_[l + 1]));
      std::vector<double> row(static_cast<size_t>(sizes_[l]));
      for (Eigen::Index r = 0; r < w_[l].rows(); ++r) {
        for (Eigen::Index c = 0; c < w_[l].cols(); ++c) row[static_cast<size_t>(c)] = w_[l](r, c);
        Var z = affine_const(t, row, act, b_[l][r]);
        next[static_cast<size_t>(r)] = (l != w_.size() - 1) ? tanh(z) : z;
      }
      act = std::move(next);
    }
    return act;
  }

  /// Unrolls the network with both the input and all parameters registered as
  /// differentiable leaves. Parameter leaves are appended to `param_leaves`
  /// in flat-layout order, input leaves to `input_leaves`.
  std::vector<Var> forward_on_tape(Tape& t, const Vec& x, std::vector<Var>& input_leaves,
                                   std::vector<Var>& param_leaves) const {
    check_input(static_cast<int>(x.size()));
    input_leaves = t.leaves(x);
    std::vector<std::vector<Var>> wv(w_.size());
    std::vector<std::vector<Var>> bv(w_.size());
    for (size_t l = 0; l < w_.size(); ++l) {
      wv[l].reserve(static_cast<size_t>(w_[l].size()));
      for (Eigen::Index r = 0; r < w_[l].rows(); ++r)
        for (Eigen::Index c = 0; c < w_[l].cols(); ++c) {
          wv[l].push_back(t.leaf(w_[l](r, c)));
          param_leaves.push_back(wv[l].back());
        }
      bv[l].reserve(static_cast<size_t>(b_[l].size()));
      for (Eigen::Index r = 0; r < b_[l].size(); ++r) {
        bv[l].push_back(t.leaf(b_[l][r]));
        param_leaves.push_back(bv[l].back());
      }
    }
    std::vector<Var> act = input_leaves;
    for (size_t l = 0; l < w_.size(); ++l) {
      const int in = sizes_[l];
      std::vector<Var> next(static_cast<size_t>(sizes_[l + 1]));
      for (Eigen::Index r = 0; r < w_[l].rows(); ++r) {
        std::span<const Var> row(wv[l].data() + r * in, static_cast<size_t>(in));
        Var z = dot(t, row, act) + bv[l][static_cast<size_t>(r)];
        next[static_cast<size_t>(r)] = (l != w_.size() - 1) ? tanh(z) : z;
      }
      act = std::move(next);
    }
    return act;
  }

  // --- serialization --------------------------------------------------------

  /// Text format: header line `mlp <k> <n0> ... <nk>`, then one line per layer
  /// of row-major weights, then one line per layer of biases; 17 significant
  /// digits so 64-bit values round-trip exactly.
  void save(std::ostream& os) const {
    os << "mlp " << w_.size();
    for (int n : sizes_) os << ' ' << n;
    os << '\n';
    for (size_t l = 0; l < w_.size(); ++l) {
      for (Eigen::Index r = 0; r < w_[l].rows(); ++r)
        for (Eigen::Index c = 0; c < w_[l].cols(); ++c)
          os << (r == 0 && c == 0 ? "" : " ") << format_full(w_[l](r, c));
      os << '\n';
    }
    for (size_t l = 0; l < w_.size(); ++l) {
      for (Eigen::Index r = 0; r < b_[l].size(); ++r)
        os << (r == 0 ? "" : " ") << format_full(b_[l][r]);
      os << '\n';
    }
  }

  static Mlp load(std::istream& is) {
    std::string tag;
    is >> tag;
    if (tag != "mlp") throw std::invalid_argument("Mlp::load: expected 'mlp' header");
    int k = 0;
    if (!(is >> k) || k < 1) throw std::invalid_argument("Mlp::load: bad layer count");
    std::vector<int> sizes(static_cast<size_t>(k) + 1);
    for (int& n : sizes) {
      if (!(is >> n) || n <= 0) throw std::invalid_argument("Mlp::load: bad layer size");
    }
    Mlp net(sizes);
    for (int l = 0; l < k; ++l) {
      for (Eigen::Index r = 0; r < net.w_[l].rows(); ++r)
        for (Eigen::Index c = 0; c < net.w_[l].cols(); ++c)
          if (!(is >> net.w_[l](r, c))) throw std::invalid_argument("Mlp::load: truncated weights");
    }
    for (int l = 0; l < k; ++l) {
      for (Eigen::Index r = 0; r < net.b_[l].size(); ++r)
        if (!(is >> net.b_[l][r])) throw std::invalid_argument("Mlp::load: truncated biases");
    }
    return net;
  }

 private:
  void check_input(int dim) const {
    if (dim != sizes_.front()) {
      throw std::invalid_argument("Mlp: input dimension mismatch (got " + std::to_string(dim) +
                                  ", expected " + std::to_string(sizes_.front()) + ")");
    }
  }

  std::vector<int> sizes_;
  std::vector<Mat> w_;
  std::vector<Vec> b_;
};

/// target = tau * source + (1 - tau) * target, elementwise over all layers.
inline void polyak_update(Mlp& target, const Mlp& source, double tau) {
  if (!(tau > 0.0) || tau > 1.0) throw std::invalid_argument("polyak_update: tau must be in (0, 1]");
  for (size_t l = 0; l < target.num_layers(); ++l) {
    target.weights(l) = tau * source.weights(l) + (1.0 - tau) * target.weights(l);
    target.biases(l) = tau * source.biases(l) + (1.0 - tau) * target.biases(l);
  }
}

}  // namespace smoothrl
