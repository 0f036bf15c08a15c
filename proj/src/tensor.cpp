#include "tensor.hpp"

#include <algorithm>
#include <cmath>

namespace weakmap {

int shape_size(const Shape& s) {
  int n = 1;
  for (int e : s) {
    WM_CHECK(e > 0, ErrorCategory::kDimension, "non-positive extent in shape " << shape_str(s));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, bool requires_grad) {
  d_ = std::make_shared<TensorData>();
  int n = shape_size(shape);
  d_->shape = std::move(shape);
  d_->values.assign(static_cast<size_t>(n), 0.0);
  d_->grad.assign(static_cast<size_t>(n), 0.0);
  d_->requires_grad = requires_grad;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  WM_CHECK(values.size() == t.values().size(), ErrorCategory::kDimension,
           "value count " << values.size() << " does not fill shape " << shape_str(t.shape()));
  t.values() = std::move(values);
  return t;
}

void Tensor::zero_grad() const { std::fill(d_->grad.begin(), d_->grad.end(), 0.0); }

Tensor Tensor::clone() const {
  Tensor t(d_->shape, d_->requires_grad);
  t.values() = d_->values;
  return t;
}

int Tape::id(const Tensor& t) {
  WM_CHECK(t.defined(), ErrorCategory::kInternal, "undefined tensor used in op");
  auto it = ids_.find(t.data_ptr());
  if (it != ids_.end()) return it->second;
  int nid = static_cast<int>(nodes_.size());
  nodes_.push_back(t);
  ids_.emplace(t.data_ptr(), nid);
  adj_.emplace_back();
  return nid;
}

Tensor Tape::alloc(Shape shape, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  id(t);
  return t;
}

void Tape::record(const char* name, std::vector<int> inputs, int output,
                  std::function<void(Tape&)> forward,
                  std::function<void(Tape&)> backward) {
  ops_.push_back(OpRecord{name, std::move(inputs), output, std::move(forward), std::move(backward)});
}

std::vector<double>& Tape::adj(int id) {
  auto& a = adj_[static_cast<size_t>(id)];
  if (a.empty()) a.assign(nodes_[static_cast<size_t>(id)].values().size(), 0.0);
  return a;
}

void Tape::backward(const Tensor& loss) {
  auto it = ids_.find(loss.data_ptr());
  WM_CHECK(it != ids_.end(), ErrorCategory::kInternal, "backward: loss is not a node on this tape");
  WM_CHECK(loss.size() == 1, ErrorCategory::kDimension,
           "backward: loss must be scalar, got shape " << shape_str(loss.shape()));
  for (auto& a : adj_) a.clear();
  adj(it->second)[0] = 1.0;
  for (auto op = ops_.rbegin(); op != ops_.rend(); ++op) {
    if (!has_adj(op->output)) continue;
    op->backward(*this);
  }
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (adj_[i].empty() || !nodes_[i].requires_grad()) continue;
    auto& g = nodes_[i].grad();
    auto& a = adj_[i];
    for (size_t k = 0; k < g.size(); ++k) g[k] += a[k];
  }
  for (auto& a : adj_) a.clear();
}

void Tape::replay() {
  for (auto& op : ops_) op.forward(*this);
}

namespace {

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t && t->requires_grad()) return true;
  return false;
}

// --- conv2d -----------------------------------------------------------------

void conv2d_fwd(const TensorData& x, const TensorData& k, const TensorData* b,
                int stride, int padding, TensorData& y) {
  const int H = x.shape[0], W = x.shape[1], Cin = x.shape[2];
  const int Kh = k.shape[0], Kw = k.shape[1], Cout = k.shape[3];
  const int Ho = y.shape[0], Wo = y.shape[1];
  const double* __restrict__ xs = x.values.data();
  const double* __restrict__ ks = k.values.data();
  double* __restrict__ ys = y.values.data();
  for (int oy = 0; oy < Ho; ++oy) {
    for (int ox = 0; ox < Wo; ++ox) {
      double* __restrict__ out = ys + static_cast<size_t>((oy * Wo + ox) * Cout);
      if (b) {
        for (int co = 0; co < Cout; ++co) out[co] = b->values[static_cast<size_t>(co)];
      } else {
        std::fill(out, out + Cout, 0.0);
      }
      for (int ky = 0; ky < Kh; ++ky) {
        const int iy = oy * stride - padding + ky;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < Kw; ++kx) {
          const int ix = ox * stride - padding + kx;
          if (ix < 0 || ix >= W) continue;
          const double* __restrict__ xin = xs + static_cast<size_t>((iy * W + ix) * Cin);
          const double* __restrict__ krow = ks + static_cast<size_t>((ky * Kw + kx) * Cin * Cout);
          for (int ci = 0; ci < Cin; ++ci) {
            const double xv = xin[ci];
            const double* __restrict__ kk = krow + ci * Cout;
            for (int co = 0; co < Cout; ++co) out[co] += xv * kk[co];
          }
        }
      }
    }
  }
}

void conv2d_bwd(const TensorData& x, const TensorData& k, int stride, int padding,
                const Shape& yshape, const std::vector<double>& gy,
                std::vector<double>* gx, std::vector<double>* gk, std::vector<double>* gb) {
  const int H = x.shape[0], W = x.shape[1], Cin = x.shape[2];
  const int Kh = k.shape[0], Kw = k.shape[1], Cout = k.shape[3];
  const int Ho = yshape[0], Wo = yshape[1];
  const double* __restrict__ xs = x.values.data();
  const double* __restrict__ ks = k.values.data();
  const double* __restrict__ gys = gy.data();
  double* __restrict__ gxs = gx ? gx->data() : nullptr;
  double* __restrict__ gks = gk ? gk->data() : nullptr;
  double* __restrict__ gbs = gb ? gb->data() : nullptr;
  for (int oy = 0; oy < Ho; ++oy) {
    for (int ox = 0; ox < Wo; ++ox) {
      const double* __restrict__ g = gys + static_cast<size_t>((oy * Wo + ox) * Cout);
      if (gbs) {
        for (int co = 0; co < Cout; ++co) gbs[co] += g[co];
      }
      for (int ky = 0; ky < Kh; ++ky) {
        const int iy = oy * stride - padding + ky;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < Kw; ++kx) {
          const int ix = ox * stride - padding + kx;
          if (ix < 0 || ix >= W) continue;
          const double* __restrict__ xin = xs + static_cast<size_t>((iy * W + ix) * Cin);
          const size_t koff = static_cast<size_t>((ky * Kw + kx) * Cin * Cout);
          if (gks && gxs) {
            // fused: one sweep shares the x and adjoint loads
            double* __restrict__ gkrow = gks + koff;
            const double* __restrict__ krow = ks + koff;
            double* __restrict__ gxin = gxs + static_cast<size_t>((iy * W + ix) * Cin);
            for (int ci = 0; ci < Cin; ++ci) {
              const double xv = xin[ci];
              double* __restrict__ gkk = gkrow + ci * Cout;
              const double* __restrict__ kk = krow + ci * Cout;
              double acc = 0.0;
              for (int co = 0; co < Cout; ++co) {
                const double gv = g[co];
                acc += kk[co] * gv;
                gkk[co] += xv * gv;
              }
              gxin[ci] += acc;
            }
          } else if (gks) {
            double* __restrict__ gkrow = gks + koff;
            for (int ci = 0; ci < Cin; ++ci) {
              const double xv = xin[ci];
              double* __restrict__ gkk = gkrow + ci * Cout;
              for (int co = 0; co < Cout; ++co) gkk[co] += xv * g[co];
            }
          } else if (gxs) {
            const double* __restrict__ krow = ks + koff;
            double* __restrict__ gxin = gxs + static_cast<size_t>((iy * W + ix) * Cin);
            for (int ci = 0; ci < Cin; ++ci) {
              const double* __restrict__ kk = krow + ci * Cout;
              double acc = 0.0;
              for (int co = 0; co < Cout; ++co) acc += kk[co] * g[co];
              gxin[ci] += acc;
            }
          }
        }
      }
    }
  }
}

// --- pooling ----------------------------------------------------------------

void avg_pool_fwd(const TensorData& x, int window, int stride, TensorData& y) {
  const int W = x.shape[1], C = x.shape[2];
  const int Ho = y.shape[0], Wo = y.shape[1];
  const double inv = 1.0 / (window * window);
  for (int oy = 0; oy < Ho; ++oy) {
    for (int ox = 0; ox < Wo; ++ox) {
      double* out = &y.values[static_cast<size_t>((oy * Wo + ox) * C)];
      std::fill(out, out + C, 0.0);
      for (int wy = 0; wy < window; ++wy) {
        for (int wx = 0; wx < window; ++wx) {
          const double* xin =
              &x.values[static_cast<size_t>(((oy * stride + wy) * W + ox * stride + wx) * C)];
          for (int c = 0; c < C; ++c) out[c] += xin[c];
        }
      }
      for (int c = 0; c < C; ++c) out[c] *= inv;
    }
  }
}

void global_avg_fwd(const TensorData& x, TensorData& y) {
  const int H = x.shape[0], W = x.shape[1], C = x.shape[2];
  const double inv = 1.0 / (H * W);
  std::fill(y.values.begin(), y.values.end(), 0.0);
  for (int i = 0; i < H * W; ++i) {
    const double* xin = &x.values[static_cast<size_t>(i * C)];
    for (int c = 0; c < C; ++c) y.values[static_cast<size_t>(c)] += xin[c];
  }
  for (int c = 0; c < C; ++c) y.values[static_cast<size_t>(c)] *= inv;
}

// --- dense ------------------------------------------------------------------

void dense_fwd(const TensorData& x, const TensorData& w, const TensorData* b, TensorData& y) {
  const int N = x.shape[0], M = w.shape[0];
  for (int m = 0; m < M; ++m) {
    double acc = b ? b->values[static_cast<size_t>(m)] : 0.0;
    const double* wrow = &w.values[static_cast<size_t>(m * N)];
    for (int n = 0; n < N; ++n) acc += wrow[n] * x.values[static_cast<size_t>(n)];
    y.values[static_cast<size_t>(m)] = acc;
  }
}

// --- batchnorm --------------------------------------------------------------

constexpr double kBnEps = 1e-5;

void bn_affine_fwd(const TensorData& x, const TensorData& gamma, const TensorData& beta,
                   const std::vector<double>& mean, const std::vector<double>& var,
                   TensorData& y) {
  const int HW = x.shape[0] * x.shape[1], C = x.shape[2];
  std::vector<double> scale(static_cast<size_t>(C)), shift(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) {
    scale[static_cast<size_t>(c)] =
        gamma.values[static_cast<size_t>(c)] / std::sqrt(var[static_cast<size_t>(c)] + kBnEps);
    shift[static_cast<size_t>(c)] = beta.values[static_cast<size_t>(c)] -
                                    scale[static_cast<size_t>(c)] * mean[static_cast<size_t>(c)];
  }
  for (int i = 0; i < HW; ++i) {
    const double* xin = &x.values[static_cast<size_t>(i * C)];
    double* out = &y.values[static_cast<size_t>(i * C)];
    for (int c = 0; c < C; ++c) out[c] = scale[static_cast<size_t>(c)] * xin[c] + shift[static_cast<size_t>(c)];
  }
}

void bn_batch_stats(const TensorData& x, std::vector<double>& mean, std::vector<double>& var) {
  const int HW = x.shape[0] * x.shape[1], C = x.shape[2];
  mean.assign(static_cast<size_t>(C), 0.0);
  var.assign(static_cast<size_t>(C), 0.0);
  for (int i = 0; i < HW; ++i) {
    const double* xin = &x.values[static_cast<size_t>(i * C)];
    for (int c = 0; c < C; ++c) mean[static_cast<size_t>(c)] += xin[c];
  }
  for (int c = 0; c < C; ++c) mean[static_cast<size_t>(c)] /= HW;
  for (int i = 0; i < HW; ++i) {
    const double* xin = &x.values[static_cast<size_t>(i * C)];
    for (int c = 0; c < C; ++c) {
      double d = xin[c] - mean[static_cast<size_t>(c)];
      var[static_cast<size_t>(c)] += d * d;
    }
  }
  for (int c = 0; c < C; ++c) var[static_cast<size_t>(c)] /= HW;
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernels,
              const Tensor* bias, int stride, int padding) {
  WM_CHECK(input.rank() == 3, ErrorCategory::kDimension,
           "conv2d: input must be [H,W,C], got " << shape_str(input.shape()));
  WM_CHECK(kernels.rank() == 4, ErrorCategory::kDimension,
           "conv2d: kernels must be [Kh,Kw,Cin,Cout], got " << shape_str(kernels.shape()));
  const int H = input.extent(0), W = input.extent(1), Cin = input.extent(2);
  const int Kh = kernels.extent(0), Kw = kernels.extent(1), Cout = kernels.extent(3);
  WM_CHECK(kernels.extent(2) == Cin, ErrorCategory::kDimension,
           "conv2d: input has " << Cin << " channels but kernels expect " << kernels.extent(2)
                                << " (input " << shape_str(input.shape()) << ", kernels "
                                << shape_str(kernels.shape()) << ")");
  WM_CHECK(stride >= 1, ErrorCategory::kDimension, "conv2d: stride must be >= 1, got " << stride);
  WM_CHECK(padding >= 0, ErrorCategory::kDimension, "conv2d: padding must be >= 0, got " << padding);
  WM_CHECK(Kh <= H + 2 * padding && Kw <= W + 2 * padding, ErrorCategory::kDimension,
           "conv2d: kernel " << Kh << "x" << Kw << " exceeds padded input "
                             << (H + 2 * padding) << "x" << (W + 2 * padding));
  if (bias) {
    WM_CHECK(bias->rank() == 1 && bias->extent(0) == Cout, ErrorCategory::kDimension,
             "conv2d: bias must be [" << Cout << "], got " << shape_str(bias->shape()));
  }
  const int Ho = (H + 2 * padding - Kh) / stride + 1;
  const int Wo = (W + 2 * padding - Kw) / stride + 1;

  Tensor out = tape.alloc({Ho, Wo, Cout}, any_requires_grad({&input, &kernels, bias}));
  conv2d_fwd(*input.data_ptr(), *kernels.data_ptr(), bias ? bias->data_ptr() : nullptr,
             stride, padding, *out.data_ptr());

  const int xi = tape.id(input), ki = tape.id(kernels);
  const int bi = bias ? tape.id(*bias) : -1;
  const int oi = tape.id(out);
  std::vector<int> ins = {xi, ki};
  if (bi >= 0) ins.push_back(bi);
  Tensor x = input, k = kernels, o = out;
  Tensor b = bias ? *bias : Tensor();
  tape.record(
      "conv2d", std::move(ins), oi,
      [x, k, b, o, stride, padding](Tape&) {
        conv2d_fwd(*x.data_ptr(), *k.data_ptr(), b.defined() ? b.data_ptr() : nullptr,
                   stride, padding, *o.data_ptr());
      },
      [x, k, o, stride, padding, xi, ki, bi, oi](Tape& t) {
        const auto& gy = t.adj(oi);
        auto* gx = t.node(xi).requires_grad() ? &t.adj(xi) : nullptr;
        auto* gk = t.node(ki).requires_grad() ? &t.adj(ki) : nullptr;
        auto* gb = (bi >= 0 && t.node(bi).requires_grad()) ? &t.adj(bi) : nullptr;
        if (!gx && !gk && !gb) return;
        conv2d_bwd(*x.data_ptr(), *k.data_ptr(), stride, padding, o.shape(), gy, gx, gk, gb);
      });
  return out;
}

Tensor avg_pool2d(Tape& tape, const Tensor& input, int window, int stride) {
  WM_CHECK(input.rank() == 3, ErrorCategory::kDimension,
           "avg_pool2d: input must be [H,W,C], got " << shape_str(input.shape()));
  const int H = input.extent(0), W = input.extent(1), C = input.extent(2);
  WM_CHECK(window >= 1 && stride >= 1, ErrorCategory::kDimension,
           "avg_pool2d: window and stride must be >= 1");
  WM_CHECK(window <= H && window <= W, ErrorCategory::kDimension,
           "avg_pool2d: window " << window << " exceeds spatial extent " << H << "x" << W);
  const int Ho = (H - window) / stride + 1;
  const int Wo = (W - window) / stride + 1;

  Tensor out = tape.alloc({Ho, Wo, C}, input.requires_grad());
  avg_pool_fwd(*input.data_ptr(), window, stride, *out.data_ptr());

  const int xi = tape.id(input), oi = tape.id(out);
  Tensor x = input, o = out;
  tape.record(
      "avg_pool2d", {xi}, oi,
      [x, o, window, stride](Tape&) { avg_pool_fwd(*x.data_ptr(), window, stride, *o.data_ptr()); },
      [x, o, window, stride, xi, oi](Tape& t) {
        if (!t.node(xi).requires_grad()) return;
        const auto& gy = t.adj(oi);
        auto& gx = t.adj(xi);
        const int W_ = x.extent(1), C_ = x.extent(2);
        const int Ho_ = o.extent(0), Wo_ = o.extent(1);
        const double inv = 1.0 / (window * window);
        for (int oy = 0; oy < Ho_; ++oy)
          for (int ox = 0; ox < Wo_; ++ox) {
            const double* g = &gy[static_cast<size_t>((oy * Wo_ + ox) * C_)];
            for (int wy = 0; wy < window; ++wy)
              for (int wx = 0; wx < window; ++wx) {
                double* gi = &gx[static_cast<size_t>(
                    ((oy * stride + wy) * W_ + ox * stride + wx) * C_)];
                for (int c = 0; c < C_; ++c) gi[c] += g[c] * inv;
              }
          }
      });
  return out;
}

Tensor global_avg_pool(Tape& tape, const Tensor& input) {
  WM_CHECK(input.rank() == 3, ErrorCategory::kDimension,
           "global_avg_pool: input must be [H,W,C], got " << shape_str(input.shape()));
  const int H = input.extent(0), W = input.extent(1), C = input.extent(2);

  Tensor out = tape.alloc({C}, input.requires_grad());
  global_avg_fwd(*input.data_ptr(), *out.data_ptr());

  const int xi = tape.id(input), oi = tape.id(out);
  Tensor x = input, o = out;
  tape.record(
      "global_avg_pool", {xi}, oi,
      [x, o](Tape&) { global_avg_fwd(*x.data_ptr(), *o.data_ptr()); },
      [H, W, C, xi, oi](Tape& t) {
        if (!t.node(xi).requires_grad()) return;
        const auto& gy = t.adj(oi);
        auto& gx = t.adj(xi);
        const double inv = 1.0 / (H * W);
        for (int i = 0; i < H * W; ++i)
          for (int c = 0; c < C; ++c)
            gx[static_cast<size_t>(i * C + c)] += gy[static_cast<size_t>(c)] * inv;
      });
  return out;
}

Tensor dense(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor* bias) {
  WM_CHECK(input.rank() == 1, ErrorCategory::kDimension,
           "dense: input must be rank 1, got " << shape_str(input.shape()));
  WM_CHECK(weight.rank() == 2, ErrorCategory::kDimension,
           "dense: weight must be [out,in], got " << shape_str(weight.shape()));
  const int N = input.extent(0), M = weight.extent(0);
  WM_CHECK(weight.extent(1) == N, ErrorCategory::kDimension,
           "dense: weight " << shape_str(weight.shape()) << " incompatible with input length " << N);
  if (bias) {
    WM_CHECK(bias->rank() == 1 && bias->extent(0) == M, ErrorCategory::kDimension,
             "dense: bias must be [" << M << "], got " << shape_str(bias->shape()));
  }

  Tensor out = tape.alloc({M}, any_requires_grad({&input, &weight, bias}));
  dense_fwd(*input.data_ptr(), *weight.data_ptr(), bias ? bias->data_ptr() : nullptr,
            *out.data_ptr());

  const int xi = tape.id(input), wi = tape.id(weight);
  const int bi = bias ? tape.id(*bias) : -1;
  const int oi = tape.id(out);
  std::vector<int> ins = {xi, wi};
  if (bi >= 0) ins.push_back(bi);
  Tensor x = input, w = weight, o = out;
  Tensor b = bias ? *bias : Tensor();
  tape.record(
      "dense", std::move(ins), oi,
      [x, w, b, o](Tape&) {
        dense_fwd(*x.data_ptr(), *w.data_ptr(), b.defined() ? b.data_ptr() : nullptr,
                  *o.data_ptr());
      },
      [x, w, N, M, xi, wi, bi, oi](Tape& t) {
        const auto& gy = t.adj(oi);
        if (t.node(xi).requires_grad()) {
          auto& gx = t.adj(xi);
          for (int m = 0; m < M; ++m) {
            const double g = gy[static_cast<size_t>(m)];
            const double* wrow = &w.values()[static_cast<size_t>(m * N)];
            for (int n = 0; n < N; ++n) gx[static_cast<size_t>(n)] += wrow[n] * g;
          }
        }
        if (t.node(wi).requires_grad()) {
          auto& gw = t.adj(wi);
          for (int m = 0; m < M; ++m) {
            const double g = gy[static_cast<size_t>(m)];
            double* gwrow = &gw[static_cast<size_t>(m * N)];
            for (int n = 0; n < N; ++n) gwrow[n] += g * x.v(n);
          }
        }
        if (bi >= 0 && t.node(bi).requires_grad()) {
          auto& gb = t.adj(bi);
          for (int m = 0; m < M; ++m) gb[static_cast<size_t>(m)] += gy[static_cast<size_t>(m)];
        }
      });
  return out;
}

Tensor relu(Tape& tape, const Tensor& input) {
  Tensor out = tape.alloc(input.shape(), input.requires_grad());
  for (int i = 0; i < input.size(); ++i) {
    out.v(i) = input.v(i) > 0.0 ? input.v(i) : 0.0;
    tape.note_kink(std::abs(input.v(i)));
  }
  const int xi = tape.id(input), oi = tape.id(out);
  Tensor x = input, o = out;
  tape.record(
      "relu", {xi}, oi,
      [x, o](Tape&) {
        for (int i = 0; i < x.size(); ++i) o.v(i) = x.v(i) > 0.0 ? x.v(i) : 0.0;
      },
      [x, xi, oi](Tape& t) {
        if (!t.node(xi).requires_grad()) return;
        const auto& gy = t.adj(oi);
        auto& gx = t.adj(xi);
        // subgradient at 0 taken as 0
        for (int i = 0; i < x.size(); ++i)
          if (x.v(i) > 0.0) gx[static_cast<size_t>(i)] += gy[static_cast<size_t>(i)];
      });
  return out;
}

namespace {

// Saturated doubles would round to exactly 0 or 1 around |x| > 36; keep the
// output strictly inside (0,1) so downstream logs stay finite.
inline double sigmoid_scalar(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  if (s < 1e-12) return 1e-12;
  if (s > 1.0 - 1e-12) return 1.0 - 1e-12;
  return s;
}

}  // namespace

Tensor sigmoid(Tape& tape, const Tensor& input) {
  Tensor out = tape.alloc(input.shape(), input.requires_grad());
  for (int i = 0; i < input.size(); ++i) out.v(i) = sigmoid_scalar(input.v(i));
  const int xi = tape.id(input), oi = tape.id(out);
  Tensor x = input, o = out;
  tape.record(
      "sigmoid", {xi}, oi,
      [x, o](Tape&) {
        for (int i = 0; i < x.size(); ++i) o.v(i) = sigmoid_scalar(x.v(i));
      },
      [o, xi, oi](Tape& t) {
        if (!t.node(xi).requires_grad()) return;
        const auto& gy = t.adj(oi);
        auto& gx = t.adj(xi);
        for (int i = 0; i < o.size(); ++i) {
          const double s = o.v(i);
          gx[static_cast<size_t>(i)] += gy[static_cast<size_t>(i)] * s * (1.0 - s);
        }
      });
  return out;
}

Tensor elementwise_mul(Tape& tape, const Tensor& a, const Tensor& b) {
  const bool broadcast = a.rank() == 3 && b.rank() == 1 && b.extent(0) == a.extent(2) &&
                         a.shape() != b.shape();
  WM_CHECK(broadcast || a.shape() == b.shape(), ErrorCategory::kDimension,
           "elementwise_mul: shape mismatch " << shape_str(a.shape()) << " vs "
                                              << shape_str(b.shape()));
  Tensor out = tape.alloc(a.shape(), any_requires_grad({&a, &b}));
  const int ai = tape.id(a), bi = tape.id(b), oi = tape.id(out);
  Tensor ta = a, tb = b, o = out;
  if (!broadcast) {
    for (int i = 0; i < a.size(); ++i) out.v(i) = a.v(i) * b.v(i);
    tape.record(
        "elementwise_mul", {ai, bi}, oi,
        [ta, tb, o](Tape&) {
          for (int i = 0; i < ta.size(); ++i) o.v(i) = ta.v(i) * tb.v(i);
        },
        [ta, tb, ai, bi, oi](Tape& t) {
          const auto& gy = t.adj(oi);
          if (t.node(ai).requires_grad()) {
            auto& ga = t.adj(ai);
            for (int i = 0; i < ta.size(); ++i) ga[static_cast<size_t>(i)] += gy[static_cast<size_t>(i)] * tb.v(i);
          }
          if (t.node(bi).requires_grad()) {
            auto& gb = t.adj(bi);
            for (int i = 0; i < ta.size(); ++i) gb[static_cast<size_t>(i)] += gy[static_cast<size_t>(i)] * ta.v(i);
          }
        });
    return out;
  }
  const int HW = a.extent(0) * a.extent(1), C = a.extent(2);
  auto fwd = [ta, tb, o, HW, C](Tape&) {
    for (int i = 0; i < HW; ++i)
      for (int c = 0; c < C; ++c)
        o.v(i * C + c) = ta.v(i * C + c) * tb.v(c);
  };
  fwd(tape);
  tape.record(
      "elementwise_mul_bcast", {ai, bi}, oi, fwd,
      [ta, tb, HW, C, ai, bi, oi](Tape& t) {
        const auto& gy = t.adj(oi);
        if (t.node(ai).requires_grad()) {
          auto& ga = t.adj(ai);
          for (int i = 0; i < HW; ++i)
            for (int c = 0; c < C; ++c)
              ga[static_cast<size_t>(i * C + c)] += gy[static_cast<size_t>(i * C + c)] * tb.v(c);
        }
        if (t.node(bi).requires_grad()) {
          auto& gb = t.adj(bi);
          for (int i = 0; i < HW; ++i)
            for (int c = 0; c < C; ++c)
              gb[static_cast<size_t>(c)] += gy[static_cast<size_t>(i * C + c)] * ta.v(i * C + c);
        }
      });
  return out;
}

Tensor scalar_mul(Tape& tape, const Tensor& a, double s) {
  Tensor out = tape.alloc(a.shape(), a.requires_grad());
  for (int i = 0; i < a.size(); ++i) out.v(i) = a.v(i) * s;
  const int ai = tape.id(a), oi = tape.id(out);
  Tensor ta = a, o = out;
  tape.record(
      "scalar_mul", {ai}, oi,
      [ta, o, s](Tape&) {
        for (int i = 0; i < ta.size(); ++i) o.v(i) = ta.v(i) * s;
      },
      [ta, s, ai, oi](Tape& t) {
        if (!t.node(ai).requires_grad()) return;
        const auto& gy = t.adj(oi);
        auto& ga = t.adj(ai);
        for (int i = 0; i < ta.size(); ++i) ga[static_cast<size_t>(i)] += gy[static_cast<size_t>(i)] * s;
      });
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  WM_CHECK(a.shape() == b.shape(), ErrorCategory::kDimension,
           "add: shape mismatch " << shape_str(a.shape()) << " vs " << shape_str(b.shape()));
  Tensor out = tape.alloc(a.shape(), any_requires_grad({&a, &b}));
  for (int i = 0; i < a.size(); ++i) out.v(i) = a.v(i) + b.v(i);
  const int ai = tape.id(a), bi = tape.id(b), oi = tape.id(out);
  Tensor ta = a, tb = b, o = out;
  tape.record(
      "add", {ai, bi}, oi,
      [ta, tb, o](Tape&) {
        for (int i = 0; i < ta.size(); ++i) o.v(i) = ta.v(i) + tb.v(i);
      },
      [ta, ai, bi, oi](Tape& t) {
        const auto& gy = t.adj(oi);
        for (int which : {ai, bi}) {
          if (!t.node(which).requires_grad()) continue;
          auto& g = t.adj(which);
          for (int i = 0; i < ta.size(); ++i) g[static_cast<size_t>(i)] += gy[static_cast<size_t>(i)];
        }
      });
  return out;
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  WM_CHECK(a.rank() == 3 && b.rank() == 3, ErrorCategory::kDimension,
           "concat_channels: inputs must be [H,W,C]");
  WM_CHECK(a.extent(0) == b.extent(0) && a.extent(1) == b.extent(1), ErrorCategory::kDimension,
           "concat_channels: spatial mismatch " << shape_str(a.shape()) << " vs "
                                                << shape_str(b.shape()));
  const int H = a.extent(0), W = a.extent(1), Ca = a.extent(2), Cb = b.extent(2);
  Tensor out = tape.alloc({H, W, Ca + Cb}, any_requires_grad({&a, &b}));
  const int ai = tape.id(a), bi = tape.id(b), oi = tape.id(out);
  Tensor ta = a, tb = b, o = out;
  auto fwd = [ta, tb, o, H, W, Ca, Cb](Tape&) {
    for (int i = 0; i < H * W; ++i) {
      double* dst = &o.values()[static_cast<size_t>(i * (Ca + Cb))];
      const double* pa = &ta.values()[static_cast<size_t>(i * Ca)];
      const double* pb = &tb.values()[static_cast<size_t>(i * Cb)];
      std::copy(pa, pa + Ca, dst);
      std::copy(pb, pb + Cb, dst + Ca);
    }
  };
  fwd(tape);
  tape.record(
      "concat_channels", {ai, bi}, oi, fwd,
      [H, W, Ca, Cb, ai, bi, oi](Tape& t) {
        const auto& gy = t.adj(oi);
        if (t.node(ai).requires_grad()) {
          auto& ga = t.adj(ai);
          for (int i = 0; i < H * W; ++i)
            for (int c = 0; c < Ca; ++c)
              ga[static_cast<size_t>(i * Ca + c)] += gy[static_cast<size_t>(i * (Ca + Cb) + c)];
        }
        if (t.node(bi).requires_grad()) {
          auto& gb = t.adj(bi);
          for (int i = 0; i < H * W; ++i)
            for (int c = 0; c < Cb; ++c)
              gb[static_cast<size_t>(i * Cb + c)] += gy[static_cast<size_t>(i * (Ca + Cb) + Ca + c)];
        }
      });
  return out;
}

Tensor slice_channels(Tape& tape, const Tensor& a, int c0, int c1) {
  WM_CHECK(a.rank() == 3, ErrorCategory::kDimension, "slice_channels: input must be [H,W,C]");
  const int H = a.extent(0), W = a.extent(1), C = a.extent(2);
  WM_CHECK(0 <= c0 && c0 < c1 && c1 <= C, ErrorCategory::kDimension,
           "slice_channels: bad range [" << c0 << "," << c1 << ") for " << C << " channels");
  const int Cs = c1 - c0;
  Tensor out = tape.alloc({H, W, Cs}, a.requires_grad());
  const int ai = tape.id(a), oi = tape.id(out);
  Tensor ta = a, o = out;
  auto fwd = [ta, o, H, W, C, c0, Cs](Tape&) {
    for (int i = 0; i < H * W; ++i)
      for (int c = 0; c < Cs; ++c) o.v(i * Cs + c) = ta.v(i * C + c0 + c);
  };
  fwd(tape);
  tape.record(
      "slice_channels", {ai}, oi, fwd,
      [H, W, C, c0, Cs, ai, oi](Tape& t) {
        if (!t.node(ai).requires_grad()) return;
        const auto& gy = t.adj(oi);
        auto& ga = t.adj(ai);
        for (int i = 0; i < H * W; ++i)
          for (int c = 0; c < Cs; ++c)
            ga[static_cast<size_t>(i * C + c0 + c)] += gy[static_cast<size_t>(i * Cs + c)];
      });
  return out;
}

Tensor batchnorm(Tape& tape, const Tensor& input, const Tensor& gamma,
                 const Tensor& beta, bool train, RunningStats* stats) {
  WM_CHECK(input.rank() == 3, ErrorCategory::kDimension,
           "batchnorm: input must be [H,W,C], got " << shape_str(input.shape()));
  const int H = input.extent(0), W = input.extent(1), C = input.extent(2);
  WM_CHECK(gamma.rank() == 1 && gamma.extent(0) == C && beta.rank() == 1 && beta.extent(0) == C,
           ErrorCategory::kDimension,
           "batchnorm: gamma/beta must be [" << C << "], got " << shape_str(gamma.shape())
                                             << " and " << shape_str(beta.shape()));
  if (train) {
    WM_CHECK(H * W >= 2, ErrorCategory::kDimension,
             "batchnorm: train mode needs >= 2 spatial positions, got " << H << "x" << W);
  } else {
    WM_CHECK(stats != nullptr && static_cast<int>(stats->mean.size()) == C,
             ErrorCategory::kDimension, "batchnorm: eval mode needs running stats of width " << C);
  }

  std::vector<double> mean, var;
  if (train) {
    bn_batch_stats(*input.data_ptr(), mean, var);
    if (stats) {
      if (static_cast<int>(stats->mean.size()) != C) stats->init(C);
      const double m = stats->momentum;
      for (int c = 0; c < C; ++c) {
        stats->mean[static_cast<size_t>(c)] =
            (1.0 - m) * stats->mean[static_cast<size_t>(c)] + m * mean[static_cast<size_t>(c)];
        stats->var[static_cast<size_t>(c)] =
            (1.0 - m) * stats->var[static_cast<size_t>(c)] + m * var[static_cast<size_t>(c)];
      }
    }
  } else {
    mean = stats->mean;
    var = stats->var;
  }

  Tensor out = tape.alloc(input.shape(), any_requires_grad({&input, &gamma, &beta}));
  bn_affine_fwd(*input.data_ptr(), *gamma.data_ptr(), *beta.data_ptr(), mean, var,
                *out.data_ptr());

  const int xi = tape.id(input), gi = tape.id(gamma), bi = tape.id(beta);
  const int oi = tape.id(out);
  Tensor x = input, g = gamma, b = beta, o = out;
  // replay recomputes batch stats from the inputs but never re-touches the
  // running stats; the momentum update is a record-time side effect only.
  tape.record(
      "batchnorm", {xi, gi, bi}, oi,
      [x, g, b, o, train, mean, var](Tape&) {
        if (train) {
          std::vector<double> m2, v2;
          bn_batch_stats(*x.data_ptr(), m2, v2);
          bn_affine_fwd(*x.data_ptr(), *g.data_ptr(), *b.data_ptr(), m2, v2, *o.data_ptr());
        } else {
          bn_affine_fwd(*x.data_ptr(), *g.data_ptr(), *b.data_ptr(), mean, var, *o.data_ptr());
        }
      },
      [x, g, mean, var, train, H, W, C, xi, gi, bi, oi](Tape& t) {
        const auto& gy = t.adj(oi);
        const int HW = H * W;
        const bool need_gx = t.node(xi).requires_grad();
        const bool need_gg = t.node(gi).requires_grad();
        const bool need_gb = t.node(bi).requires_grad();
        if (!need_gx && !need_gg && !need_gb) return;
        for (int c = 0; c < C; ++c) {
          const double mc = mean[static_cast<size_t>(c)];
          const double vc = var[static_cast<size_t>(c)];
          const double inv_sd = 1.0 / std::sqrt(vc + kBnEps);
          const double gc = g.v(c);
          double sum_gy = 0.0, sum_gy_xhat = 0.0;
          for (int i = 0; i < HW; ++i) {
            const double gyi = gy[static_cast<size_t>(i * C + c)];
            sum_gy += gyi;
            sum_gy_xhat += gyi * (x.v(i * C + c) - mc) * inv_sd;
          }
          if (need_gg) t.adj(gi)[static_cast<size_t>(c)] += sum_gy_xhat;
          if (need_gb) t.adj(bi)[static_cast<size_t>(c)] += sum_gy;
          if (!need_gx) continue;
          auto& gx = t.adj(xi);
          if (train) {
            for (int i = 0; i < HW; ++i) {
              const double gyi = gy[static_cast<size_t>(i * C + c)];
              const double xhat = (x.v(i * C + c) - mc) * inv_sd;
              gx[static_cast<size_t>(i * C + c)] +=
                  gc * inv_sd * (gyi - sum_gy / HW - xhat * sum_gy_xhat / HW);
            }
          } else {
            for (int i = 0; i < HW; ++i)
              gx[static_cast<size_t>(i * C + c)] += gc * inv_sd * gy[static_cast<size_t>(i * C + c)];
          }
        }
      });
  return out;
}

Tensor sum(Tape& tape, const Tensor& input) {
  Tensor out = tape.alloc({1}, input.requires_grad());
  double acc = 0.0;
  for (int i = 0; i < input.size(); ++i) acc += input.v(i);
  out.v(0) = acc;
  const int xi = tape.id(input), oi = tape.id(out);
  Tensor x = input, o = out;
  tape.record(
      "sum", {xi}, oi,
      [x, o](Tape&) {
        double a = 0.0;
        for (int i = 0; i < x.size(); ++i) a += x.v(i);
        o.v(0) = a;
      },
      [x, xi, oi](Tape& t) {
        if (!t.node(xi).requires_grad()) return;
        const double g = t.adj(oi)[0];
        auto& gx = t.adj(xi);
        for (int i = 0; i < x.size(); ++i) gx[static_cast<size_t>(i)] += g;
      });
  return out;
}

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& fn,
                  const Tensor& input, double eps, double* kink_margin_out) {
  Tensor x = input.clone();
  x.set_requires_grad(true);
  x.zero_grad();

  std::vector<double> g_ad;
  {
    Tape tape;
    Tensor y = fn(tape, x);
    WM_CHECK(y.size() == 1, ErrorCategory::kDimension,
             "grad_check: fn must produce a scalar, got shape " << shape_str(y.shape()));
    tape.backward(y);
    if (kink_margin_out) *kink_margin_out = tape.kink_margin();
    g_ad = x.grad();
  }

  double max_err = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    const double saved = x.v(i);
    x.v(i) = saved + eps;
    double fp;
    {
      Tape tape;
      fp = fn(tape, x).v(0);
    }
    x.v(i) = saved - eps;
    double fm;
    {
      Tape tape;
      fm = fn(tape, x).v(0);
    }
    x.v(i) = saved;
    const double g_fd = (fp - fm) / (2.0 * eps);
    const double denom = std::max(1e-8, std::abs(g_ad[static_cast<size_t>(i)]) + std::abs(g_fd));
    const double err = std::abs(g_ad[static_cast<size_t>(i)] - g_fd) / denom;
    if (err > max_err) max_err = err;
  }
  return max_err;
}

}  // namespace weakmap
