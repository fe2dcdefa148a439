#include "tsdistill/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace tsdistill {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapF = Eigen::Map<MatF>;
using CMapF = Eigen::Map<const MatF>;

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
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

static std::shared_ptr<TensorImpl> make_impl(Shape shape, float fill) {
  auto p = std::make_shared<TensorImpl>();
  p->shape = std::move(shape);
  p->data.assign(static_cast<size_t>(numel(p->shape)), fill);
  return p;
}

Tensor Tensor::zeros(Shape shape) { return Tensor(make_impl(std::move(shape), 0.0f)); }

Tensor Tensor::full(Shape shape, float value) {
  return Tensor(make_impl(std::move(shape), value));
}

Tensor Tensor::scalar(float value) { return full({1}, value); }

Tensor Tensor::from_data(Shape shape, std::vector<float> values) {
  if (numel(shape) != static_cast<int64_t>(values.size()))
    throw ShapeError("from_data: " + shape_str(shape) + " vs " +
                     std::to_string(values.size()) + " values");
  auto p = std::make_shared<TensorImpl>();
  p->shape = std::move(shape);
  p->data = std::move(values);
  return Tensor(p);
}

Tensor Tensor::randn(Shape shape, Rng& rng, float sigma) {
  Tensor t = zeros(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<float>(rng.normal() * sigma);
  return t;
}

Tensor Tensor::trunc_normal(Shape shape, Rng& rng, float sigma) {
  Tensor t = zeros(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<float>(rng.trunc_normal(sigma));
  return t;
}

int64_t Tensor::dim(int i) const {
  if (i < 0) i += static_cast<int>(p_->shape.size());
  return p_->shape[static_cast<size_t>(i)];
}

float Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor " + shape_str(shape()));
  return p_->data[0];
}

Tensor Tensor::clone() const {
  Tensor t;
  t.p_ = std::make_shared<TensorImpl>();
  t.p_->shape = p_->shape;
  t.p_->data = p_->data;
  t.p_->requires_grad = p_->requires_grad;
  return t;
}

// ---- graph machinery ----

namespace {
thread_local Graph* g_active = nullptr;
}

Graph* active_graph() { return g_active; }

GraphScope::GraphScope(Graph& g) : prev_(g_active) { g_active = &g; }
GraphScope::~GraphScope() { g_active = prev_; }

NoGradScope::NoGradScope() : prev_(g_active) { g_active = nullptr; }
NoGradScope::~NoGradScope() { g_active = prev_; }

bool tape_active(std::initializer_list<const Tensor*> inputs) {
  if (!g_active) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->needs_grad()) return true;
  return false;
}

void tape_record(const char* name, std::function<void()> fn) {
  g_active->record(name, std::move(fn));
}

void Graph::backward(Tensor& loss) {
  if (consumed_) throw std::runtime_error("Graph::backward: tape already consumed");
  if (loss.size() != 1)
    throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  consumed_ = true;
  loss.grad_accum()[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
  nodes_.clear();
}

// Records fn as the backward of an op with the given inputs; marks out.
template <typename Fn>
static void record_op(const char* name, std::initializer_list<const Tensor*> ins,
                      Tensor& out, Fn&& fn) {
  if (!tape_active(ins)) return;
  out.mark_node();
  tape_record(name, std::forward<Fn>(fn));
}

static void check_same_shape(Tensor a, Tensor b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

// ---- elementwise ----

Tensor add(Tensor a, Tensor b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  record_op("add", {&a, &b}, out, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    const float* go = out.grad().data();
    const int64_t n = out.size();
    if (a.needs_grad()) {
      float* ga = a.grad_accum();
      for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
    }
    if (b.needs_grad()) {
      float* gb = b.grad_accum();
      for (int64_t i = 0; i < n; ++i) gb[i] += go[i];
    }
  });
  return out;
}

Tensor add_bcast(Tensor x, Tensor y) {
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  if (ys.size() > xs.size() ||
      !std::equal(ys.rbegin(), ys.rend(), xs.rbegin()))
    throw ShapeError("add_bcast: " + shape_str(ys) + " is not a suffix of " +
                     shape_str(xs));
  const int64_t m = numel(ys);
  const int64_t reps = x.size() / m;
  Tensor out = Tensor::zeros(xs);
  for (int64_t r = 0; r < reps; ++r)
    for (int64_t i = 0; i < m; ++i)
      out.data()[r * m + i] = x.data()[r * m + i] + y.data()[i];
  record_op("add_bcast", {&x, &y}, out, [x, y, out, m, reps]() mutable {
    if (!out.has_grad()) return;
    const float* go = out.grad().data();
    if (x.needs_grad()) {
      float* gx = x.grad_accum();
      const int64_t n = out.size();
      for (int64_t i = 0; i < n; ++i) gx[i] += go[i];
    }
    if (y.needs_grad()) {
      float* gy = y.grad_accum();
      for (int64_t r = 0; r < reps; ++r)
        for (int64_t i = 0; i < m; ++i) gy[i] += go[r * m + i];
    }
  });
  return out;
}

Tensor sub(Tensor a, Tensor b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  record_op("sub", {&a, &b}, out, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    const float* go = out.grad().data();
    const int64_t n = out.size();
    if (a.needs_grad()) {
      float* ga = a.grad_accum();
      for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
    }
    if (b.needs_grad()) {
      float* gb = b.grad_accum();
      for (int64_t i = 0; i < n; ++i) gb[i] -= go[i];
    }
  });
  return out;
}

Tensor mul(Tensor a, Tensor b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  record_op("mul", {&a, &b}, out, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    const float* go = out.grad().data();
    const int64_t n = out.size();
    if (a.needs_grad()) {
      float* ga = a.grad_accum();
      for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * b.data()[i];
    }
    if (b.needs_grad()) {
      float* gb = b.grad_accum();
      for (int64_t i = 0; i < n; ++i) gb[i] += go[i] * a.data()[i];
    }
  });
  return out;
}

Tensor scale(Tensor x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  const float cf = static_cast<float>(c);
  for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * cf;
  record_op("scale", {&x}, out, [x, out, cf]() mutable {
    if (!out.has_grad()) return;
    if (!x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    for (int64_t i = 0; i < out.size(); ++i) gx[i] += go[i] * cf;
  });
  return out;
}

Tensor add_scalar(Tensor x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  const float cf = static_cast<float>(c);
  for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] + cf;
  record_op("add_scalar", {&x}, out, [x, out]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    for (int64_t i = 0; i < out.size(); ++i) gx[i] += go[i];
  });
  return out;
}

// ---- structural ----

Tensor reshape(Tensor x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor out = Tensor::from_data(std::move(shape), x.buf());
  record_op("reshape", {&x}, out, [x, out]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    for (int64_t i = 0; i < out.size(); ++i) gx[i] += go[i];
  });
  return out;
}

static std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

// index map for permute: out flat index -> in flat index
static std::vector<int64_t> permute_map(const Shape& in_shape,
                                        const std::vector<int>& perm) {
  const size_t nd = in_shape.size();
  Shape out_shape(nd);
  for (size_t i = 0; i < nd; ++i) out_shape[i] = in_shape[static_cast<size_t>(perm[i])];
  auto in_strides = strides_of(in_shape);
  auto out_strides = strides_of(out_shape);
  const int64_t n = numel(in_shape);
  std::vector<int64_t> map(static_cast<size_t>(n));
  std::vector<int64_t> idx(nd, 0);
  for (int64_t o = 0; o < n; ++o) {
    int64_t rem = o;
    int64_t src = 0;
    for (size_t d = 0; d < nd; ++d) {
      int64_t id = rem / out_strides[d];
      rem %= out_strides[d];
      src += id * in_strides[static_cast<size_t>(perm[d])];
    }
    map[static_cast<size_t>(o)] = src;
  }
  return map;
}

Tensor permute(Tensor x, const std::vector<int>& perm) {
  const Shape& xs = x.shape();
  if (perm.size() != xs.size()) throw ShapeError("permute: rank mismatch");
  Shape out_shape(xs.size());
  for (size_t i = 0; i < perm.size(); ++i)
    out_shape[i] = xs[static_cast<size_t>(perm[i])];
  auto map = permute_map(xs, perm);
  Tensor out = Tensor::zeros(out_shape);
  for (int64_t o = 0; o < out.size(); ++o)
    out.data()[o] = x.data()[map[static_cast<size_t>(o)]];
  record_op("permute", {&x}, out, [x, out, map = std::move(map)]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    for (int64_t o = 0; o < out.size(); ++o) gx[map[static_cast<size_t>(o)]] += go[o];
  });
  return out;
}

Tensor narrow(Tensor x, int axis, int64_t start, int64_t len) {
  const Shape& xs = x.shape();
  if (axis < 0) axis += static_cast<int>(xs.size());
  if (axis < 0 || axis >= static_cast<int>(xs.size()))
    throw ShapeError("narrow: bad axis");
  if (start < 0 || start + len > xs[static_cast<size_t>(axis)])
    throw ShapeError("narrow: range out of bounds");
  Shape os = xs;
  os[static_cast<size_t>(axis)] = len;
  int64_t inner = 1;
  for (size_t d = static_cast<size_t>(axis) + 1; d < xs.size(); ++d) inner *= xs[d];
  int64_t outer = 1;
  for (size_t d = 0; d < static_cast<size_t>(axis); ++d) outer *= xs[d];
  const int64_t in_axis = xs[static_cast<size_t>(axis)];
  Tensor out = Tensor::zeros(os);
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * len * inner,
                x.data() + (o * in_axis + start) * inner,
                static_cast<size_t>(len * inner) * sizeof(float));
  record_op("narrow", {&x}, out,
            [x, out, outer, inner, in_axis, start, len]() mutable {
              if (!out.has_grad() || !x.needs_grad()) return;
              const float* go = out.grad().data();
              float* gx = x.grad_accum();
              for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < len * inner; ++i)
                  gx[(o * in_axis + start) * inner + i] += go[o * len * inner + i];
            });
  return out;
}

Tensor concat_last(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_last: empty input");
  Shape lead = xs[0].shape();
  lead.pop_back();
  int64_t total = 0;
  std::vector<int64_t> widths;
  for (Tensor t : xs) {
    Shape l = t.shape();
    int64_t w = l.back();
    l.pop_back();
    if (l != lead) throw ShapeError("concat_last: leading dims differ");
    widths.push_back(w);
    total += w;
  }
  Shape os = lead;
  os.push_back(total);
  const int64_t rows = numel(lead);
  Tensor out = Tensor::zeros(os);
  int64_t off = 0;
  for (size_t k = 0; k < xs.size(); ++k) {
    const int64_t w = widths[k];
    for (int64_t r = 0; r < rows; ++r)
      std::memcpy(out.data() + r * total + off, xs[k].data() + r * w,
                  static_cast<size_t>(w) * sizeof(float));
    off += w;
  }
  std::vector<const Tensor*> ptrs;
  for (Tensor t : xs) ptrs.push_back(&t);
  bool rec = g_active != nullptr &&
             std::any_of(ptrs.begin(), ptrs.end(),
                         [](const Tensor* t) { return t->needs_grad(); });
  if (rec) {
    Tensor o = out;
    o.mark_node();
    std::vector<Tensor> ins = xs;
    tape_record("concat_last", [ins, out, widths, rows, total]() mutable {
      if (!out.has_grad()) return;
      const float* go = out.grad().data();
      int64_t off = 0;
      for (size_t k = 0; k < ins.size(); ++k) {
        const int64_t w = widths[k];
        if (ins[k].needs_grad()) {
          float* gi = ins[k].grad_accum();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < w; ++j) gi[r * w + j] += go[r * total + off + j];
        }
        off += w;
      }
    });
  }
  return out;
}

Tensor index_select_rows(Tensor x, const std::vector<int64_t>& rows) {
  if (x.ndim() != 2) throw ShapeError("index_select_rows: need 2-D input");
  const int64_t d = x.dim(1);
  const int64_t m = static_cast<int64_t>(rows.size());
  Tensor out = Tensor::zeros({m, d});
  for (int64_t i = 0; i < m; ++i) {
    if (rows[static_cast<size_t>(i)] < 0 || rows[static_cast<size_t>(i)] >= x.dim(0))
      throw ShapeError("index_select_rows: row out of range");
    std::memcpy(out.data() + i * d, x.data() + rows[static_cast<size_t>(i)] * d,
                static_cast<size_t>(d) * sizeof(float));
  }
  record_op("index_select_rows", {&x}, out, [x, out, rows, d, m]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < d; ++j)
        gx[rows[static_cast<size_t>(i)] * d + j] += go[i * d + j];
  });
  return out;
}

// ---- linear algebra ----

Tensor matmul(Tensor a, Tensor b) {
  if (a.ndim() < 1 || b.ndim() != 2) throw ShapeError("matmul: b must be 2-D");
  const int64_t k = a.dim(-1);
  if (k != b.dim(0))
    throw ShapeError("matmul: inner dims " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int64_t n = b.dim(1);
  const int64_t rows = a.size() / k;
  Shape os = a.shape();
  os.back() = n;
  Tensor out = Tensor::zeros(os);
  {
    CMapF A(a.data(), rows, k);
    CMapF B(b.data(), k, n);
    MapF C(out.data(), rows, n);
    C.noalias() = A * B;
  }
  record_op("matmul", {&a, &b}, out, [a, b, out, rows, k, n]() mutable {
    if (!out.has_grad()) return;
    CMapF dC(out.grad().data(), rows, n);
    if (a.needs_grad()) {
      CMapF B(b.data(), k, n);
      MapF dA(a.grad_accum(), rows, k);
      dA.noalias() += dC * B.transpose();
    }
    if (b.needs_grad()) {
      CMapF A(a.data(), rows, k);
      MapF dB(b.grad_accum(), k, n);
      dB.noalias() += A.transpose() * dC;
    }
  });
  return out;
}

Tensor matmul_nt(Tensor a, Tensor b) {
  if (a.ndim() != 2 || b.ndim() != 2) throw ShapeError("matmul_nt: need 2-D inputs");
  const int64_t n = a.dim(0), k = a.dim(1), m = b.dim(0);
  if (k != b.dim(1)) throw ShapeError("matmul_nt: inner dims mismatch");
  Tensor out = Tensor::zeros({n, m});
  {
    CMapF A(a.data(), n, k);
    CMapF B(b.data(), m, k);
    MapF C(out.data(), n, m);
    C.noalias() = A * B.transpose();
  }
  record_op("matmul_nt", {&a, &b}, out, [a, b, out, n, k, m]() mutable {
    if (!out.has_grad()) return;
    CMapF dC(out.grad().data(), n, m);
    if (a.needs_grad()) {
      CMapF B(b.data(), m, k);
      MapF dA(a.grad_accum(), n, k);
      dA.noalias() += dC * B;
    }
    if (b.needs_grad()) {
      CMapF A(a.data(), n, k);
      MapF dB(b.grad_accum(), m, k);
      dB.noalias() += dC.transpose() * A;
    }
  });
  return out;
}

static void bmm_check(Tensor a, Tensor b, bool nt) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0))
    throw ShapeError("bmm: need matching 3-D inputs");
  const int64_t inner_b = nt ? b.dim(2) : b.dim(1);
  if (a.dim(2) != inner_b) throw ShapeError("bmm: inner dims mismatch");
}

Tensor bmm(Tensor a, Tensor b) {
  bmm_check(a, b, false);
  const int64_t G = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor out = Tensor::zeros({G, m, n});
  for (int64_t g = 0; g < G; ++g) {
    CMapF A(a.data() + g * m * k, m, k);
    CMapF B(b.data() + g * k * n, k, n);
    MapF C(out.data() + g * m * n, m, n);
    C.noalias() = A * B;
  }
  record_op("bmm", {&a, &b}, out, [a, b, out, G, m, k, n]() mutable {
    if (!out.has_grad()) return;
    for (int64_t g = 0; g < G; ++g) {
      CMapF dC(out.grad().data() + g * m * n, m, n);
      if (a.needs_grad()) {
        CMapF B(b.data() + g * k * n, k, n);
        MapF dA(a.grad_accum() + g * m * k, m, k);
        dA.noalias() += dC * B.transpose();
      }
      if (b.needs_grad()) {
        CMapF A(a.data() + g * m * k, m, k);
        MapF dB(b.grad_accum() + g * k * n, k, n);
        dB.noalias() += A.transpose() * dC;
      }
    }
  });
  return out;
}

Tensor bmm_nt(Tensor a, Tensor b) {
  bmm_check(a, b, true);
  const int64_t G = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  Tensor out = Tensor::zeros({G, m, n});
  for (int64_t g = 0; g < G; ++g) {
    CMapF A(a.data() + g * m * k, m, k);
    CMapF B(b.data() + g * n * k, n, k);
    MapF C(out.data() + g * m * n, m, n);
    C.noalias() = A * B.transpose();
  }
  record_op("bmm_nt", {&a, &b}, out, [a, b, out, G, m, k, n]() mutable {
    if (!out.has_grad()) return;
    for (int64_t g = 0; g < G; ++g) {
      CMapF dC(out.grad().data() + g * m * n, m, n);
      if (a.needs_grad()) {
        CMapF B(b.data() + g * n * k, n, k);
        MapF dA(a.grad_accum() + g * m * k, m, k);
        dA.noalias() += dC * B;
      }
      if (b.needs_grad()) {
        CMapF A(a.data() + g * m * k, m, k);
        MapF dB(b.grad_accum() + g * n * k, n, k);
        dB.noalias() += dC.transpose() * A;
      }
    }
  });
  return out;
}

// ---- neural ops ----

Tensor conv1d_same(Tensor x, Tensor w, Tensor b) {
  if (x.ndim() != 3 || w.ndim() != 3 || b.ndim() != 1)
    throw ShapeError("conv1d_same: expect x[B,Cin,T], w[Cout,Cin,k], b[Cout]");
  const int64_t B = x.dim(0), Cin = x.dim(1), T = x.dim(2);
  const int64_t Cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != Cin) throw ShapeError("conv1d_same: channel mismatch");
  if (b.dim(0) != Cout) throw ShapeError("conv1d_same: bias mismatch");
  if (k % 2 == 0) throw ConfigError("conv1d_same: kernel size must be odd");
  const int64_t pad = (k - 1) / 2;
  Tensor out = Tensor::zeros({B, Cout, T});
  auto X = [&](int64_t bb, int64_t c, int64_t t) -> float {
    return (t < 0 || t >= T) ? 0.0f : x.data()[(bb * Cin + c) * T + t];
  };
  for (int64_t bb = 0; bb < B; ++bb)
    for (int64_t co = 0; co < Cout; ++co)
      for (int64_t t = 0; t < T; ++t) {
        float acc = b.data()[co];
        for (int64_t ci = 0; ci < Cin; ++ci)
          for (int64_t j = 0; j < k; ++j)
            acc += w.data()[(co * Cin + ci) * k + j] * X(bb, ci, t + j - pad);
        out.data()[(bb * Cout + co) * T + t] = acc;
      }
  record_op("conv1d_same", {&x, &w, &b}, out,
            [x, w, b, out, B, Cin, Cout, T, k, pad]() mutable {
              if (!out.has_grad()) return;
              const float* go = out.grad().data();
              if (b.needs_grad()) {
                float* gb = b.grad_accum();
                for (int64_t bb = 0; bb < B; ++bb)
                  for (int64_t co = 0; co < Cout; ++co)
                    for (int64_t t = 0; t < T; ++t)
                      gb[co] += go[(bb * Cout + co) * T + t];
              }
              if (w.needs_grad()) {
                float* gw = w.grad_accum();
                for (int64_t bb = 0; bb < B; ++bb)
                  for (int64_t co = 0; co < Cout; ++co)
                    for (int64_t ci = 0; ci < Cin; ++ci)
                      for (int64_t j = 0; j < k; ++j) {
                        double acc = 0.0;
                        for (int64_t t = 0; t < T; ++t) {
                          int64_t src = t + j - pad;
                          if (src < 0 || src >= T) continue;
                          acc += static_cast<double>(go[(bb * Cout + co) * T + t]) *
                                 x.data()[(bb * Cin + ci) * T + src];
                        }
                        gw[(co * Cin + ci) * k + j] += static_cast<float>(acc);
                      }
              }
              if (x.needs_grad()) {
                float* gx = x.grad_accum();
                for (int64_t bb = 0; bb < B; ++bb)
                  for (int64_t co = 0; co < Cout; ++co)
                    for (int64_t t = 0; t < T; ++t) {
                      const float g = go[(bb * Cout + co) * T + t];
                      for (int64_t ci = 0; ci < Cin; ++ci)
                        for (int64_t j = 0; j < k; ++j) {
                          int64_t src = t + j - pad;
                          if (src < 0 || src >= T) continue;
                          gx[(bb * Cin + ci) * T + src] +=
                              g * w.data()[(co * Cin + ci) * k + j];
                        }
                    }
              }
            });
  return out;
}

// Shared core for layer_norm / standardize_last: per-row x_hat and 1/s.
static void normalize_rows(const float* x, int64_t rows, int64_t n, float eps,
                           float* xhat, float* inv_s) {
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = x + r * n;
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += xr[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double d = xr[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double s = std::sqrt(var + eps);
    inv_s[r] = static_cast<float>(1.0 / s);
    for (int64_t i = 0; i < n; ++i)
      xhat[r * n + i] = static_cast<float>((xr[i] - mean) / s);
  }
}

// dx = (dy_hat - mean(dy_hat) - xhat * mean(dy_hat*xhat)) / s  (per row)
static void normalize_backward_row(const float* dyhat, const float* xhat,
                                   float inv_s, int64_t n, float* gx) {
  double m1 = 0.0, m2 = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    m1 += dyhat[i];
    m2 += static_cast<double>(dyhat[i]) * xhat[i];
  }
  m1 /= static_cast<double>(n);
  m2 /= static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i)
    gx[i] += static_cast<float>((dyhat[i] - m1 - xhat[i] * m2) * inv_s);
}

Tensor layer_norm(Tensor x, Tensor gamma, Tensor beta,
                  float eps) {
  if (eps <= 0.0f) throw ConfigError("layer_norm: eps must be positive");
  const int64_t n = x.dim(-1);
  if (gamma.size() != n || beta.size() != n)
    throw ShapeError("layer_norm: affine params must match last dim");
  const int64_t rows = x.size() / n;
  Tensor out = Tensor::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(x.size()));
  auto inv_s = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
  normalize_rows(x.data(), rows, n, eps, xhat->data(), inv_s->data());
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t i = 0; i < n; ++i)
      out.data()[r * n + i] =
          (*xhat)[static_cast<size_t>(r * n + i)] * gamma.data()[i] + beta.data()[i];
  record_op("layer_norm", {&x, &gamma, &beta}, out,
            [x, gamma, beta, out, xhat, inv_s, rows, n]() mutable {
              if (!out.has_grad()) return;
              const float* go = out.grad().data();
              if (gamma.needs_grad()) {
                float* gg = gamma.grad_accum();
                for (int64_t r = 0; r < rows; ++r)
                  for (int64_t i = 0; i < n; ++i)
                    gg[i] += go[r * n + i] * (*xhat)[static_cast<size_t>(r * n + i)];
              }
              if (beta.needs_grad()) {
                float* gb = beta.grad_accum();
                for (int64_t r = 0; r < rows; ++r)
                  for (int64_t i = 0; i < n; ++i) gb[i] += go[r * n + i];
              }
              if (x.needs_grad()) {
                float* gx = x.grad_accum();
                std::vector<float> dyhat(static_cast<size_t>(n));
                for (int64_t r = 0; r < rows; ++r) {
                  for (int64_t i = 0; i < n; ++i)
                    dyhat[static_cast<size_t>(i)] = go[r * n + i] * gamma.data()[i];
                  normalize_backward_row(dyhat.data(), xhat->data() + r * n,
                                         (*inv_s)[static_cast<size_t>(r)], n,
                                         gx + r * n);
                }
              }
            });
  return out;
}

Tensor standardize_last(Tensor x, float eps) {
  const int64_t n = x.dim(-1);
  const int64_t rows = x.size() / n;
  Tensor out = Tensor::zeros(x.shape());
  auto inv_s = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
  normalize_rows(x.data(), rows, n, eps, out.data(), inv_s->data());
  record_op("standardize_last", {&x}, out, [x, out, inv_s, rows, n]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    for (int64_t r = 0; r < rows; ++r)
      normalize_backward_row(go + r * n, out.data() + r * n,
                             (*inv_s)[static_cast<size_t>(r)], n, gx + r * n);
  });
  return out;
}

Tensor softmax_last(Tensor x, double temperature) {
  if (temperature <= 0.0) throw ConfigError("softmax: temperature must be positive");
  const int64_t n = x.dim(-1);
  const int64_t rows = x.size() / n;
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = x.data() + r * n;
    float* yr = out.data() + r * n;
    double mx = -1e300;
    for (int64_t i = 0; i < n; ++i) mx = std::max(mx, xr[i] / temperature);
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double e = std::exp(xr[i] / temperature - mx);
      yr[i] = static_cast<float>(e);
      sum += e;
    }
    for (int64_t i = 0; i < n; ++i) yr[i] = static_cast<float>(yr[i] / sum);
  }
  record_op("softmax_last", {&x}, out, [x, out, rows, n, temperature]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    for (int64_t r = 0; r < rows; ++r) {
      const float* yr = out.data() + r * n;
      double dot = 0.0;
      for (int64_t i = 0; i < n; ++i) dot += static_cast<double>(go[r * n + i]) * yr[i];
      for (int64_t i = 0; i < n; ++i)
        gx[r * n + i] += static_cast<float>(yr[i] * (go[r * n + i] - dot) / temperature);
    }
  });
  return out;
}

Tensor log_softmax_last(Tensor x, double temperature) {
  if (temperature <= 0.0)
    throw ConfigError("log_softmax: temperature must be positive");
  const int64_t n = x.dim(-1);
  const int64_t rows = x.size() / n;
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = x.data() + r * n;
    float* yr = out.data() + r * n;
    double mx = -1e300;
    for (int64_t i = 0; i < n; ++i) mx = std::max(mx, xr[i] / temperature);
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) sum += std::exp(xr[i] / temperature - mx);
    const double lse = mx + std::log(sum);
    for (int64_t i = 0; i < n; ++i)
      yr[i] = static_cast<float>(xr[i] / temperature - lse);
  }
  record_op("log_softmax_last", {&x}, out, [x, out, rows, n, temperature]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    for (int64_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (int64_t i = 0; i < n; ++i) gsum += go[r * n + i];
      for (int64_t i = 0; i < n; ++i) {
        double p = std::exp(static_cast<double>(out.data()[r * n + i]));
        gx[r * n + i] += static_cast<float>((go[r * n + i] - p * gsum) / temperature);
      }
    }
  });
  return out;
}

Tensor gelu(Tensor x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) {
    double v = x.data()[i];
    double t = std::tanh(kC * (v + kA * v * v * v));
    out.data()[i] = static_cast<float>(0.5 * v * (1.0 + t));
  }
  record_op("gelu", {&x}, out, [x, out]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    for (int64_t i = 0; i < out.size(); ++i) {
      double v = x.data()[i];
      double u = kC * (v + kA * v * v * v);
      double t = std::tanh(u);
      double dudv = kC * (1.0 + 3.0 * kA * v * v);
      double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dudv;
      gx[i] += static_cast<float>(go[i] * d);
    }
  });
  return out;
}

Tensor dropout(Tensor x, float p, bool training, Rng& rng) {
  if (p < 0.0f || p >= 1.0f) throw ConfigError("dropout: need 0 <= p < 1");
  if (!training || p == 0.0f) {
    // identity that still participates in the graph
    Tensor out = Tensor::from_data(x.shape(), x.buf());
    record_op("dropout_eval", {&x}, out, [x, out]() mutable {
      if (!out.has_grad() || !x.needs_grad()) return;
      const float* go = out.grad().data();
      float* gx = x.grad_accum();
      for (int64_t i = 0; i < out.size(); ++i) gx[i] += go[i];
    });
    return out;
  }
  const float keep_scale = 1.0f / (1.0f - p);
  auto mask = std::make_shared<std::vector<float>>(static_cast<size_t>(x.size()));
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) {
    float m = rng.uniform() >= p ? keep_scale : 0.0f;
    (*mask)[static_cast<size_t>(i)] = m;
    out.data()[i] = x.data()[i] * m;
  }
  record_op("dropout", {&x}, out, [x, out, mask]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    for (int64_t i = 0; i < out.size(); ++i)
      gx[i] += go[i] * (*mask)[static_cast<size_t>(i)];
  });
  return out;
}

Tensor linear_resize(Tensor x, int64_t new_len) {
  if (x.ndim() != 2) throw ShapeError("linear_resize: expect [B,T]");
  if (new_len < 2) throw ConfigError("linear_resize: new_len must be >= 2");
  const int64_t B = x.dim(0), T = x.dim(1);
  if (T < 1) throw ShapeError("linear_resize: empty input");
  Tensor out = Tensor::zeros({B, new_len});
  // endpoint-aligned grid: first and last samples preserved
  const double step = (T == 1) ? 0.0 : static_cast<double>(T - 1) / (new_len - 1);
  std::vector<int64_t> lo(static_cast<size_t>(new_len));
  std::vector<float> frac(static_cast<size_t>(new_len));
  for (int64_t t = 0; t < new_len; ++t) {
    double src = t * step;
    int64_t l = static_cast<int64_t>(src);
    if (l >= T - 1) l = T - 2 >= 0 ? T - 2 : 0;
    lo[static_cast<size_t>(t)] = l;
    frac[static_cast<size_t>(t)] = static_cast<float>(src - l);
  }
  for (int64_t bb = 0; bb < B; ++bb)
    for (int64_t t = 0; t < new_len; ++t) {
      int64_t l = lo[static_cast<size_t>(t)];
      float f = frac[static_cast<size_t>(t)];
      int64_t hi = std::min<int64_t>(l + 1, T - 1);
      out.data()[bb * new_len + t] =
          (1.0f - f) * x.data()[bb * T + l] + f * x.data()[bb * T + hi];
    }
  record_op("linear_resize", {&x}, out,
            [x, out, B, T, new_len, lo = std::move(lo), frac = std::move(frac)]() mutable {
              if (!out.has_grad() || !x.needs_grad()) return;
              const float* go = out.grad().data();
              float* gx = x.grad_accum();
              for (int64_t bb = 0; bb < B; ++bb)
                for (int64_t t = 0; t < new_len; ++t) {
                  int64_t l = lo[static_cast<size_t>(t)];
                  float f = frac[static_cast<size_t>(t)];
                  int64_t hi = std::min<int64_t>(l + 1, T - 1);
                  gx[bb * T + l] += go[bb * new_len + t] * (1.0f - f);
                  gx[bb * T + hi] += go[bb * new_len + t] * f;
                }
            });
  return out;
}

Tensor first_diff(Tensor x) {
  if (x.ndim() != 2) throw ShapeError("first_diff: expect [B,T]");
  const int64_t B = x.dim(0), T = x.dim(1);
  Tensor out = Tensor::zeros({B, T});
  for (int64_t bb = 0; bb < B; ++bb) {
    out.data()[bb * T] = 0.0f;
    for (int64_t t = 1; t < T; ++t)
      out.data()[bb * T + t] = x.data()[bb * T + t] - x.data()[bb * T + t - 1];
  }
  record_op("first_diff", {&x}, out, [x, out, B, T]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t t = 1; t < T; ++t) {
        gx[bb * T + t] += go[bb * T + t];
        gx[bb * T + t - 1] -= go[bb * T + t];
      }
  });
  return out;
}

// ---- patch / reduction ----

static void check_patches(int64_t T, int64_t P, const char* op) {
  if (P <= 0 || T % P != 0)
    throw ShapeError(std::string(op) + ": length " + std::to_string(T) +
                     " not divisible into " + std::to_string(P) + " patches");
}

Tensor patch_mean(Tensor x, int64_t patches) {
  if (x.ndim() != 2) throw ShapeError("patch_mean: expect [B,T]");
  const int64_t B = x.dim(0), T = x.dim(1);
  check_patches(T, patches, "patch_mean");
  const int64_t w = T / patches;
  Tensor out = Tensor::zeros({B, patches});
  for (int64_t bb = 0; bb < B; ++bb)
    for (int64_t p = 0; p < patches; ++p) {
      double acc = 0.0;
      for (int64_t i = 0; i < w; ++i) acc += x.data()[bb * T + p * w + i];
      out.data()[bb * patches + p] = static_cast<float>(acc / w);
    }
  record_op("patch_mean", {&x}, out, [x, out, B, patches, w, T]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    const float inv = 1.0f / static_cast<float>(w);
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t p = 0; p < patches; ++p)
        for (int64_t i = 0; i < w; ++i)
          gx[bb * T + p * w + i] += go[bb * patches + p] * inv;
  });
  return out;
}

Tensor patch_std(Tensor x, int64_t patches, float eps) {
  if (x.ndim() != 2) throw ShapeError("patch_std: expect [B,T]");
  const int64_t B = x.dim(0), T = x.dim(1);
  check_patches(T, patches, "patch_std");
  const int64_t w = T / patches;
  Tensor out = Tensor::zeros({B, patches});
  auto means = std::make_shared<std::vector<float>>(static_cast<size_t>(B * patches));
  for (int64_t bb = 0; bb < B; ++bb)
    for (int64_t p = 0; p < patches; ++p) {
      double mean = 0.0;
      for (int64_t i = 0; i < w; ++i) mean += x.data()[bb * T + p * w + i];
      mean /= w;
      double var = 0.0;
      for (int64_t i = 0; i < w; ++i) {
        double d = x.data()[bb * T + p * w + i] - mean;
        var += d * d;
      }
      var /= w;  // population variance
      (*means)[static_cast<size_t>(bb * patches + p)] = static_cast<float>(mean);
      out.data()[bb * patches + p] = static_cast<float>(std::sqrt(var + eps));
    }
  record_op("patch_std", {&x}, out, [x, out, means, B, patches, w, T]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t p = 0; p < patches; ++p) {
        const float s = out.data()[bb * patches + p];
        const float m = (*means)[static_cast<size_t>(bb * patches + p)];
        const float g = go[bb * patches + p];
        // d s / d x_i = (x_i - mean) / (w * s)
        for (int64_t i = 0; i < w; ++i)
          gx[bb * T + p * w + i] +=
              g * (x.data()[bb * T + p * w + i] - m) / (static_cast<float>(w) * s);
      }
  });
  return out;
}

Tensor patch_pool_mean(Tensor x, int64_t patches) {
  if (x.ndim() != 3) throw ShapeError("patch_pool_mean: expect [B,T,d]");
  const int64_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
  check_patches(T, patches, "patch_pool_mean");
  const int64_t w = T / patches;
  Tensor out = Tensor::zeros({B, patches, d});
  for (int64_t bb = 0; bb < B; ++bb)
    for (int64_t p = 0; p < patches; ++p)
      for (int64_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int64_t i = 0; i < w; ++i) acc += x.data()[(bb * T + p * w + i) * d + j];
        out.data()[(bb * patches + p) * d + j] = static_cast<float>(acc / w);
      }
  record_op("patch_pool_mean", {&x}, out, [x, out, B, patches, w, T, d]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    const float inv = 1.0f / static_cast<float>(w);
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t p = 0; p < patches; ++p)
        for (int64_t i = 0; i < w; ++i)
          for (int64_t j = 0; j < d; ++j)
            gx[(bb * T + p * w + i) * d + j] +=
                go[(bb * patches + p) * d + j] * inv;
  });
  return out;
}

Tensor sum_all(Tensor x) {
  double acc = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  record_op("sum_all", {&x}, out, [x, out]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float g = out.grad()[0];
    float* gx = x.grad_accum();
    for (int64_t i = 0; i < x.size(); ++i) gx[i] += g;
  });
  return out;
}

Tensor sum_last(Tensor x) {
  if (x.ndim() < 1) throw ShapeError("sum_last: need rank >= 1");
  const int64_t n = x.dim(-1);
  const int64_t rows = x.size() / n;
  Shape os = x.shape();
  os.pop_back();
  if (os.empty()) os.push_back(1);
  Tensor out = Tensor::zeros(os);
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += x.data()[r * n + i];
    out.data()[r] = static_cast<float>(acc);
  }
  record_op("sum_last", {&x}, out, [x, out, rows, n]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t i = 0; i < n; ++i) gx[r * n + i] += go[r];
  });
  return out;
}

// ---- model-specific ----

Tensor scalar_encode(Tensor v, Tensor emb, Tensor bias,
                     const std::vector<float>& scales, float tolerance) {
  if (emb.ndim() != 2 || bias.shape() != emb.shape())
    throw ShapeError("scalar_encode: emb/bias must be [S, d] and equal");
  const int64_t S = emb.dim(0), d = emb.dim(1);
  if (S != static_cast<int64_t>(scales.size()))
    throw ShapeError("scalar_encode: scale count mismatch");
  const int64_t R = v.size();
  for (int64_t i = 0; i < R; ++i)
    if (!std::isfinite(v.data()[i]))
      throw InputError("scalar_encode: non-finite input value");
  Shape os = v.shape();
  os.push_back(d);
  Tensor out = Tensor::zeros(os);
  auto sel = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(R));
  auto norm = std::make_shared<std::vector<float>>(static_cast<size_t>(R));
  for (int64_t i = 0; i < R; ++i) {
    const float a = std::fabs(v.data()[i]);
    int32_t idx = static_cast<int32_t>(S) - 1;  // fallback: largest scale
    for (int64_t s = 0; s < S; ++s)
      if (a <= tolerance * scales[static_cast<size_t>(s)]) {
        idx = static_cast<int32_t>(s);
        break;
      }
    const float nv = v.data()[i] / scales[static_cast<size_t>(idx)];
    (*sel)[static_cast<size_t>(i)] = idx;
    (*norm)[static_cast<size_t>(i)] = nv;
    for (int64_t j = 0; j < d; ++j)
      out.data()[i * d + j] = emb.data()[idx * d + j] * nv + bias.data()[idx * d + j];
  }
  record_op("scalar_encode", {&v, &emb, &bias}, out,
            [v, emb, bias, out, sel, norm, scales, R, d]() mutable {
              if (!out.has_grad()) return;
              const float* go = out.grad().data();
              for (int64_t i = 0; i < R; ++i) {
                const int32_t idx = (*sel)[static_cast<size_t>(i)];
                const float nv = (*norm)[static_cast<size_t>(i)];
                if (emb.needs_grad()) {
                  float* ge = emb.grad_accum();
                  for (int64_t j = 0; j < d; ++j) ge[idx * d + j] += go[i * d + j] * nv;
                }
                if (bias.needs_grad()) {
                  float* gb = bias.grad_accum();
                  for (int64_t j = 0; j < d; ++j) gb[idx * d + j] += go[i * d + j];
                }
                if (v.needs_grad()) {
                  float* gv = v.grad_accum();
                  double acc = 0.0;
                  for (int64_t j = 0; j < d; ++j)
                    acc += static_cast<double>(go[i * d + j]) * emb.data()[idx * d + j];
                  gv[i] += static_cast<float>(acc / scales[static_cast<size_t>(idx)]);
                }
              }
            });
  return out;
}

Tensor mask_rows(Tensor x, const std::vector<uint8_t>& mask,
                 Tensor token) {
  if (x.ndim() != 3) throw ShapeError("mask_rows: expect [B,P,d]");
  const int64_t B = x.dim(0), P = x.dim(1), d = x.dim(2);
  if (static_cast<int64_t>(mask.size()) != B * P)
    throw ShapeError("mask_rows: mask size mismatch");
  if (token.size() != d) throw ShapeError("mask_rows: token dim mismatch");
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t r = 0; r < B * P; ++r) {
    if (mask[static_cast<size_t>(r)])
      std::memcpy(out.data() + r * d, token.data(), static_cast<size_t>(d) * sizeof(float));
    else
      std::memcpy(out.data() + r * d, x.data() + r * d,
                  static_cast<size_t>(d) * sizeof(float));
  }
  record_op("mask_rows", {&x, &token}, out, [x, token, out, mask, B, P, d]() mutable {
    if (!out.has_grad()) return;
    const float* go = out.grad().data();
    if (x.needs_grad()) {
      float* gx = x.grad_accum();
      for (int64_t r = 0; r < B * P; ++r)
        if (!mask[static_cast<size_t>(r)])
          for (int64_t j = 0; j < d; ++j) gx[r * d + j] += go[r * d + j];
    }
    if (token.needs_grad()) {
      float* gt = token.grad_accum();
      for (int64_t r = 0; r < B * P; ++r)
        if (mask[static_cast<size_t>(r)])
          for (int64_t j = 0; j < d; ++j) gt[j] += go[r * d + j];
    }
  });
  return out;
}

Tensor prepend_row(Tensor x, Tensor row) {
  if (x.ndim() != 3) throw ShapeError("prepend_row: expect [B,P,d]");
  const int64_t B = x.dim(0), P = x.dim(1), d = x.dim(2);
  if (row.size() != d) throw ShapeError("prepend_row: row dim mismatch");
  Tensor out = Tensor::zeros({B, P + 1, d});
  for (int64_t bb = 0; bb < B; ++bb) {
    std::memcpy(out.data() + bb * (P + 1) * d, row.data(),
                static_cast<size_t>(d) * sizeof(float));
    std::memcpy(out.data() + (bb * (P + 1) + 1) * d, x.data() + bb * P * d,
                static_cast<size_t>(P * d) * sizeof(float));
  }
  record_op("prepend_row", {&x, &row}, out, [x, row, out, B, P, d]() mutable {
    if (!out.has_grad()) return;
    const float* go = out.grad().data();
    if (row.needs_grad()) {
      float* gr = row.grad_accum();
      for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t j = 0; j < d; ++j) gr[j] += go[bb * (P + 1) * d + j];
    }
    if (x.needs_grad()) {
      float* gx = x.grad_accum();
      for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t i = 0; i < P * d; ++i)
          gx[bb * P * d + i] += go[(bb * (P + 1) + 1) * d + i];
    }
  });
  return out;
}

Tensor l2_normalize_rows(Tensor x, float eps) {
  if (x.ndim() != 2) throw ShapeError("l2_normalize_rows: expect [N,d]");
  const int64_t N = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  auto norms = std::make_shared<std::vector<float>>(static_cast<size_t>(N));
  // denominator is max(||x||, eps): rows above eps come out exactly unit norm
  for (int64_t r = 0; r < N; ++r) {
    double sq = 0.0;
    for (int64_t j = 0; j < d; ++j)
      sq += static_cast<double>(x.data()[r * d + j]) * x.data()[r * d + j];
    const double nrm = std::sqrt(sq);
    (*norms)[static_cast<size_t>(r)] = static_cast<float>(nrm);
    const double denom = std::max<double>(nrm, eps);
    for (int64_t j = 0; j < d; ++j)
      out.data()[r * d + j] = static_cast<float>(x.data()[r * d + j] / denom);
  }
  record_op("l2_normalize_rows", {&x}, out, [x, out, norms, N, d, eps]() mutable {
    if (!out.has_grad() || !x.needs_grad()) return;
    const float* go = out.grad().data();
    float* gx = x.grad_accum();
    for (int64_t r = 0; r < N; ++r) {
      const double nrm = (*norms)[static_cast<size_t>(r)];
      if (nrm <= eps) {
        for (int64_t j = 0; j < d; ++j)
          gx[r * d + j] += static_cast<float>(go[r * d + j] / eps);
        continue;
      }
      double dot = 0.0;  // zhat . dout
      for (int64_t j = 0; j < d; ++j)
        dot += static_cast<double>(out.data()[r * d + j]) * go[r * d + j];
      for (int64_t j = 0; j < d; ++j)
        gx[r * d + j] += static_cast<float>(
            (go[r * d + j] - out.data()[r * d + j] * dot) / nrm);
    }
  });
  return out;
}

Tensor scale_rows(Tensor x, Tensor g) {
  if (x.ndim() != 2 || g.ndim() != 1 || g.dim(0) != x.dim(0))
    throw ShapeError("scale_rows: expect x[K,d], g[K]");
  const int64_t K = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t r = 0; r < K; ++r)
    for (int64_t j = 0; j < d; ++j)
      out.data()[r * d + j] = x.data()[r * d + j] * g.data()[r];
  record_op("scale_rows", {&x, &g}, out, [x, g, out, K, d]() mutable {
    if (!out.has_grad()) return;
    const float* go = out.grad().data();
    if (x.needs_grad()) {
      float* gx = x.grad_accum();
      for (int64_t r = 0; r < K; ++r)
        for (int64_t j = 0; j < d; ++j) gx[r * d + j] += go[r * d + j] * g.data()[r];
    }
    if (g.needs_grad()) {
      float* gg = g.grad_accum();
      for (int64_t r = 0; r < K; ++r) {
        double acc = 0.0;
        for (int64_t j = 0; j < d; ++j)
          acc += static_cast<double>(go[r * d + j]) * x.data()[r * d + j];
        gg[r] += static_cast<float>(acc);
      }
    }
  });
  return out;
}

bool all_finite(Tensor x) {
  for (int64_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x.data()[i])) return false;
  return true;
}

}  // namespace tsdistill
