#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsdistill/rng.hpp"

namespace tsdistill {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;     // allocated lazily, zero-filled
  bool requires_grad = false;  // leaf flag set by the owner
  bool graph_node = false;     // produced by a recorded op on the active graph

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
  }
};

// Value-like handle over shared storage. Copies alias; use clone() to detach.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value);
  static Tensor from_data(Shape shape, std::vector<float> values);
  static Tensor randn(Shape shape, Rng& rng, float sigma = 1.0f);
  static Tensor trunc_normal(Shape shape, Rng& rng, float sigma);

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const { return p_->shape; }
  int64_t dim(int i) const;
  int64_t ndim() const { return static_cast<int64_t>(p_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(p_->data.size()); }

  float* data() { return p_->data.data(); }
  const float* data() const { return p_->data.data(); }
  float item() const;

  std::vector<float>& buf() { return p_->data; }
  const std::vector<float>& buf() const { return p_->data; }

  bool requires_grad() const { return p_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    p_->requires_grad = v;
    return *this;
  }
  bool needs_grad() const { return p_->requires_grad || p_->graph_node; }
  void mark_node() { p_->graph_node = true; }

  bool has_grad() const { return !p_->grad.empty(); }
  // accumulation target; allocates zeros on first touch
  float* grad_accum() {
    p_->ensure_grad();
    return p_->grad.data();
  }
  const std::vector<float>& grad() const { return p_->grad; }
  void zero_grad() {
    if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), 0.0f);
  }
  void drop_grad() { p_->grad.clear(); }

  Tensor clone() const;  // deep copy of data; grad not copied

  TensorImpl* impl() const { return p_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> p) : p_(std::move(p)) {}
  std::shared_ptr<TensorImpl> p_;
};

// Reverse-mode tape. Single-use: backward() consumes the graph and a second
// call without re-recording throws.
class Graph {
 public:
  void record(const char* name, std::function<void()> fn) {
    nodes_.push_back({name, std::move(fn)});
  }
  void backward(Tensor& loss);
  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    const char* name;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

Graph* active_graph();

// RAII: makes g the active tape on this thread.
class GraphScope {
 public:
  explicit GraphScope(Graph& g);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;

 private:
  Graph* prev_;
};

// RAII: disables recording (teacher forward, eval paths).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;

 private:
  Graph* prev_;
};

// helpers for modules that define their own recorded ops
bool tape_active(std::initializer_list<const Tensor*> inputs);
void tape_record(const char* name, std::function<void()> fn);

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- elementwise / structural ----
Tensor add(Tensor a, Tensor b);          // same shape
Tensor add_bcast(Tensor x, Tensor y);    // y.shape is a suffix of x.shape
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor scale(Tensor x, double c);
Tensor add_scalar(Tensor x, double c);
Tensor reshape(Tensor x, Shape shape);
Tensor permute(Tensor x, const std::vector<int>& perm);
Tensor narrow(Tensor x, int axis, int64_t start, int64_t len);
Tensor concat_last(const std::vector<Tensor>& xs);
Tensor index_select_rows(Tensor x, const std::vector<int64_t>& rows);  // x [R, d]

// ---- linear algebra ----
// a [..., k] times b [k, n] -> [..., n]; leading dims of a are row-batched
Tensor matmul(Tensor a, Tensor b);
// a [n, k] times b[m, k]^T -> [n, m]
Tensor matmul_nt(Tensor a, Tensor b);
Tensor bmm(Tensor a, Tensor b);     // [G,m,k] x [G,k,n]
Tensor bmm_nt(Tensor a, Tensor b);  // [G,m,k] x [G,n,k]^T

// ---- neural ops ----
Tensor conv1d_same(Tensor x, Tensor w, Tensor b);
Tensor layer_norm(Tensor x, Tensor gamma, Tensor beta,
                  float eps = 1e-5f);
Tensor standardize_last(Tensor x, float eps);  // zero mean / unit var rows
Tensor softmax_last(Tensor x, double temperature = 1.0);
Tensor log_softmax_last(Tensor x, double temperature = 1.0);
Tensor gelu(Tensor x);
Tensor dropout(Tensor x, float p, bool training, Rng& rng);
Tensor linear_resize(Tensor x, int64_t new_len);  // x [B, T]
Tensor first_diff(Tensor x);                      // x [B, T], front pad 0

// ---- patch / reduction ----
Tensor patch_mean(Tensor x, int64_t patches);             // [B,T] -> [B,P]
Tensor patch_std(Tensor x, int64_t patches, float eps);   // population variance
Tensor patch_pool_mean(Tensor x, int64_t patches);        // [B,T,d] -> [B,P,d]
Tensor sum_all(Tensor x);   // -> [1], accumulates in double
Tensor sum_last(Tensor x);  // [..., n] -> [...]

// ---- model-specific primitives ----
// hard smallest-scale selection: out[r] = emb[i]*(v/s_i) + bias[i]
Tensor scalar_encode(Tensor v, Tensor emb, Tensor bias,
                     const std::vector<float>& scales, float tolerance);
// rows of x where mask is set are replaced by token
Tensor mask_rows(Tensor x, const std::vector<uint8_t>& mask,
                 Tensor token);
Tensor prepend_row(Tensor x, Tensor row);  // [B,P,d] -> [B,P+1,d]
Tensor l2_normalize_rows(Tensor x, float eps);
Tensor scale_rows(Tensor x, Tensor g);  // x [K,d], g [K]

bool all_finite(Tensor x);

}  // namespace tsdistill
