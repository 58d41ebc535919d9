#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gens/common.hpp"
#include "gens/io.hpp"
#include "gens/rng.hpp"

namespace gens {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Dense MLP with softplus(beta) hidden activations and a linear output
// layer. Batched columns-as-samples layout throughout.
template <class S>
struct Mlp {
  std::vector<MatX<S>> W;  // out x in per layer
  std::vector<VecX<S>> b;
  double beta = 100.0;

  static Mlp make(int in_dim, int width, int hidden, int out_dim, double beta_) {
    Mlp m;
    m.beta = beta_;
    int prev = in_dim;
    for (int l = 0; l < hidden; ++l) {
      m.W.push_back(MatX<S>::Zero(width, prev));
      m.b.push_back(VecX<S>::Zero(width));
      prev = width;
    }
    m.W.push_back(MatX<S>::Zero(out_dim, prev));
    m.b.push_back(VecX<S>::Zero(out_dim));
    return m;
  }

  int n_layers() const { return int(W.size()); }
  int in_dim() const { return int(W.front().cols()); }
  int out_dim() const { return int(W.back().rows()); }

  size_t param_count() const {
    size_t n = 0;
    for (int l = 0; l < n_layers(); ++l) n += W[l].size() + b[l].size();
    return n;
  }

  double get_param(size_t i) const {
    for (int l = 0; l < n_layers(); ++l) {
      if (i < size_t(W[l].size())) return double(W[l].data()[i]);
      i -= W[l].size();
      if (i < size_t(b[l].size())) return double(b[l].data()[i]);
      i -= b[l].size();
    }
    fail(Err::ParseError, "mlp parameter index out of range");
  }

  void set_param(size_t i, double v) {
    for (int l = 0; l < n_layers(); ++l) {
      if (i < size_t(W[l].size())) {
        W[l].data()[i] = S(v);
        return;
      }
      i -= W[l].size();
      if (i < size_t(b[l].size())) {
        b[l].data()[i] = S(v);
        return;
      }
      i -= b[l].size();
    }
    fail(Err::ParseError, "mlp parameter index out of range");
  }

  // softplus via max(z,0) + log1p(exp(-|beta z|)) / beta: exact for all z,
  // overflow-free, and expressible with vectorized array ops
  S softplus(S z) const {
    double bz = beta * double(z);
    return S(std::max(double(z), 0.0) + std::log1p(std::exp(-std::abs(bz))) / beta);
  }

  S softplus_deriv(S z) const {
    double bz = beta * double(z);
    return S(1.0 / (1.0 + std::exp(-bz)));
  }
};

// Activations recorded by a forward pass; consumed by one backward pass.
template <class S>
struct MlpTape {
  MatX<S> x0;
  std::vector<MatX<S>> z;  // preactivations per layer
  std::vector<MatX<S>> a;  // activated outputs per hidden layer
  bool valid = false;
};

template <class S>
struct MlpGrad {
  std::vector<MatX<S>> gW;
  std::vector<VecX<S>> gb;

  void init(const Mlp<S>& m) {
    gW.clear();
    gb.clear();
    for (int l = 0; l < m.n_layers(); ++l) {
      gW.push_back(MatX<S>::Zero(m.W[l].rows(), m.W[l].cols()));
      gb.push_back(VecX<S>::Zero(m.b[l].size()));
    }
  }
  void clear() {
    for (auto& g : gW) g.setZero();
    for (auto& g : gb) g.setZero();
  }
  void merge(const MlpGrad& o) {
    for (size_t l = 0; l < gW.size(); ++l) {
      gW[l] += o.gW[l];
      gb[l] += o.gb[l];
    }
  }

  double get(size_t i) const {
    for (size_t l = 0; l < gW.size(); ++l) {
      if (i < size_t(gW[l].size())) return double(gW[l].data()[i]);
      i -= gW[l].size();
      if (i < size_t(gb[l].size())) return double(gb[l].data()[i]);
      i -= gb[l].size();
    }
    fail(Err::ParseError, "mlp gradient index out of range");
  }
};

template <class S>
inline MatX<S> mlp_forward(const Mlp<S>& m, const MatX<S>& x, MlpTape<S>* tape = nullptr) {
  const int L = m.n_layers();
  if (tape) {
    tape->x0 = x;
    if (int(tape->z.size()) != L) {
      tape->z.assign(L, {});
      tape->a.assign(L, {});
    }
    tape->valid = true;
  }
  MatX<S> scratch_z, scratch_a;
  const MatX<S>* cur = &x;
  for (int l = 0; l < L; ++l) {
    MatX<S>& z = tape ? tape->z[l] : scratch_z;
    z.resize(m.W[l].rows(), cur->cols());
    z.noalias() = m.W[l] * (*cur);
    z.colwise() += m.b[l];
    if (l + 1 < L) {
      MatX<S>& a = tape ? tape->a[l] : scratch_a;
      a.resize(z.rows(), z.cols());
      const S beta = S(m.beta);
      a.array() = z.array().max(S(0)) +
                  ((z.array().abs() * -beta).exp().log1p()) * (S(1) / beta);
      cur = &a;
    } else {
      return z;
    }
  }
  return *cur;  // unreachable
}

// Backward through a recorded forward pass. Accumulates parameter gradients
// into `grad` (may be null) and optionally returns d(loss)/d(input).
template <class S>
inline void mlp_backward(const Mlp<S>& m, MlpTape<S>& tape, const MatX<S>& dy,
                         std::type_identity_t<MlpGrad<S>*> grad,
                         std::type_identity_t<MatX<S>*> dx_out) {
  require(tape.valid, Err::StaleTape, "mlp backward without a recorded forward pass");
  tape.valid = false;
  MatX<S> dz = dy, dx;
  for (int l = m.n_layers() - 1; l >= 0; --l) {
    if (l < m.n_layers() - 1) {
      // dz currently holds d/da for hidden layer l; fold in the activation.
      const S beta = S(m.beta);
      dz.array() *= ((tape.z[l].array() * -beta).exp() + S(1)).inverse();
    }
    const MatX<S>& input = l == 0 ? tape.x0 : tape.a[l - 1];
    if (grad) {
      grad->gW[l].noalias() += dz * input.transpose();
      grad->gb[l].noalias() += dz.rowwise().sum();
    }
    if (l > 0 || dx_out) {
      dx.resize(m.W[l].cols(), dz.cols());
      dx.noalias() = m.W[l].transpose() * dz;
      if (l == 0) {
        *dx_out = std::move(dx);
        return;
      }
      std::swap(dz, dx);
    } else {
      return;
    }
  }
}

// He-style init for generic MLPs; the output layer gets small weights so the
// initial output is near zero.
template <class S>
inline void he_init(Mlp<S>& m, Rng& rng, double out_scale = 0.01) {
  for (int l = 0; l < m.n_layers(); ++l) {
    bool last = l == m.n_layers() - 1;
    double std = last ? out_scale : std::sqrt(2.0 / double(m.W[l].rows()));
    for (Eigen::Index i = 0; i < m.W[l].size(); ++i) m.W[l].data()[i] = S(std * rng.normal());
    m.b[l].setZero();
  }
}

// Initialization that makes the network approximate f(p, feat) = |p| - radius
// when all feature inputs are zero. The first three inputs must be the point
// coordinates. The first layer holds an antipodal bank of Fibonacci-sphere
// directions, so after the activation the paired units carry |u_i . p| and a
// near-uniform positive mixing in the hidden layers yields ~ c * |p|; small
// random perturbations break the symmetry for training. The output layer is
// then rescaled against probe evaluations so the unit slope and zero
// crossing hold by construction.
template <class S>
inline void geometric_init(Mlp<S>& m, Rng& rng, double radius, double feat_scale) {
  const int last = m.n_layers() - 1;
  const int width = int(m.W[0].rows());
  const int half = width / 2;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  const double kappa = std::sqrt(2.0);
  m.W[0].setZero();
  for (int i = 0; i < half; ++i) {
    double z = 1.0 - 2.0 * (i + 0.5) / half;
    double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    double phi = golden * i;
    double u[3] = {rho * std::cos(phi), rho * std::sin(phi), z};
    for (int a = 0; a < 3; ++a) {
      m.W[0](i, a) = S(kappa * u[a] + 0.02 * rng.normal());
      m.W[0](half + i, a) = S(-kappa * u[a] + 0.02 * rng.normal());
    }
  }
  for (int r = 2 * half; r < width; ++r)
    for (int a = 0; a < 3; ++a) m.W[0](r, a) = S(0.02 * rng.normal());
  double feat_std = feat_scale * std::sqrt(2.0 / width);
  for (Eigen::Index c = 3; c < m.W[0].cols(); ++c)
    for (int r = 0; r < width; ++r) m.W[0](r, c) = S(feat_std * rng.normal());
  m.b[0].setZero();
  for (int l = 1; l < last; ++l) {
    double base = 1.0 / double(m.W[l].cols());
    for (Eigen::Index i = 0; i < m.W[l].size(); ++i)
      m.W[l].data()[i] = S(base * (1.0 + 0.2 * rng.normal()));
    m.b[l].setZero();
  }
  double mean = std::sqrt(M_PI / double(m.W[last].cols()));
  for (Eigen::Index i = 0; i < m.W[last].size(); ++i)
    m.W[last].data()[i] = S(mean * (1.0 + 0.01 * rng.normal()));
  m.b[last].setZero();

  // probe along deterministic directions at two radii and rescale
  const int n_dirs = 64;
  Rng probe_rng(12345, 777);
  MatX<S> x = MatX<S>::Zero(m.in_dim(), 2 * n_dirs);
  double r0 = 0.3, r1 = 0.9;
  for (int i = 0; i < n_dirs; ++i) {
    Vec3 d(probe_rng.normal(), probe_rng.normal(), probe_rng.normal());
    d.normalize();
    for (int a = 0; a < 3; ++a) {
      x(a, 2 * i) = S(r0 * d[a]);
      x(a, 2 * i + 1) = S(r1 * d[a]);
    }
  }
  MatX<S> y = mlp_forward(m, x);
  double slope = 0.0;
  for (int i = 0; i < n_dirs; ++i) slope += (double(y(0, 2 * i + 1)) - double(y(0, 2 * i)));
  slope /= n_dirs * (r1 - r0);
  if (std::abs(slope) > 1e-9) m.W[last] *= S(1.0 / slope);
  y = mlp_forward(m, x);
  double offset = 0.0;
  for (int i = 0; i < 2 * n_dirs; ++i) {
    double r = i % 2 == 0 ? r0 : r1;
    offset += double(y(0, i)) - (r - radius);
  }
  m.b[last](0) = S(double(m.b[last](0)) - offset / (2 * n_dirs));
}

template <class S>
inline void save_mlp(std::ostream& out, const Mlp<S>& m) {
  write_pod<uint32_t>(out, uint32_t(m.n_layers()));
  for (int l = 0; l < m.n_layers(); ++l) {
    write_pod<uint32_t>(out, uint32_t(m.W[l].rows()));
    write_pod<uint32_t>(out, uint32_t(m.W[l].cols()));
    for (Eigen::Index r = 0; r < m.W[l].rows(); ++r)
      for (Eigen::Index c = 0; c < m.W[l].cols(); ++c) write_pod<float>(out, float(m.W[l](r, c)));
    for (Eigen::Index r = 0; r < m.b[l].size(); ++r) write_pod<float>(out, float(m.b[l](r)));
  }
}

template <class S>
inline Mlp<S> load_mlp(std::istream& in, double beta, const std::string& origin) {
  Mlp<S> m;
  m.beta = beta;
  uint32_t n_layers = read_pod<uint32_t>(in, origin);
  for (uint32_t l = 0; l < n_layers; ++l) {
    uint32_t rows = read_pod<uint32_t>(in, origin);
    uint32_t cols = read_pod<uint32_t>(in, origin);
    MatX<S> W(rows, cols);
    for (uint32_t r = 0; r < rows; ++r)
      for (uint32_t c = 0; c < cols; ++c) W(r, c) = S(read_pod<float>(in, origin));
    VecX<S> b(rows);
    for (uint32_t r = 0; r < rows; ++r) b(r) = S(read_pod<float>(in, origin));
    m.W.push_back(std::move(W));
    m.b.push_back(std::move(b));
  }
  return m;
}

}  // namespace gens
