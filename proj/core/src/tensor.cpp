#include "skim/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace skim {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_macs = 0;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Elementwise binary op where one operand may repeat over leading dims.
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const bool a_big = is_suffix(b.shape(), a.shape());
  if (!a_big && !is_suffix(a.shape(), b.shape())) shape_fail(op, a.shape(), b.shape());
  const Shape out_shape = a_big ? a.shape() : b.shape();
  const std::size_t n = numel(out_shape);
  const std::size_t na = a.size(), nb = b.size();
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i % na], bv[i % nb]);
  return make_result(op, out_shape, std::move(out), {a, b},
                     [na, nb, n, da, db](detail::Node& self) {
                       auto& pa = self.parents[0];
                       auto& pb = self.parents[1];
                       const auto& g = self.grad;
                       if (pa->requires_grad) {
                         auto& ga = pa->grad_buffer();
                         for (std::size_t i = 0; i < n; ++i)
                           ga[i % na] += g[i] * da(pa->value[i % na], pb->value[i % nb]);
                       }
                       if (pb->requires_grad) {
                         auto& gb = pb->grad_buffer();
                         for (std::size_t i = 0; i < n; ++i)
                           gb[i % nb] += g[i] * db(pa->value[i % na], pb->value[i % nb]);
                       }
                     });
}

// Elementwise unary op; derivative expressed through input x and output y.
template <class F, class D>
Tensor unary(const char* op, const Tensor& x, F f, D d) {
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result(op, x.shape(), std::move(out), {x}, [d](detail::Node& self) {
    auto& p = self.parents[0];
    auto& gp = p->grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i)
      gp[i] += self.grad[i] * d(p->value[i], self.value[i]);
  });
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

template <class T>
void gemm_impl(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
               const T* b, T* c, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  Eigen::Map<Mat> out(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate)
      out.noalias() += lhs * rhs;
    else
      out.noalias() = lhs * rhs;
  };
  if (!ta && !tb)
    run(CMap(a, M, K), CMap(b, K, N));
  else if (!ta && tb)
    run(CMap(a, M, K), CMap(b, N, K).transpose());
  else if (ta && !tb)
    run(CMap(a, K, M).transpose(), CMap(b, K, N));
  else
    run(CMap(a, K, M).transpose(), CMap(b, N, K).transpose());
  g_macs += static_cast<std::uint64_t>(m) * n * k;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw Error("tensor blob: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

std::size_t numel(const Shape& shape) { return prod(shape, 0, shape.size()); }

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

// ---- Tensor -----------------------------------------------------------------

Tensor::Tensor() : Tensor(Shape{}, 0.0) {}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(numel(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (numel(shape) != data.size())
    throw ShapeError("tensor: shape " + to_string(shape) + " does not hold " +
                     std::to_string(data.size()) + " values");
  check_finite("tensor", data);
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{v}, requires_grad);
}

Tensor Tensor::from(std::vector<double> data, bool requires_grad) {
  Shape s{data.size()};
  return Tensor(std::move(s), std::move(data), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank())
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " +
                     to_string(shape()));
  return shape()[axis];
}

std::size_t Tensor::size() const { return node_->value.size(); }
std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf) throw Error("mutable_data: tensor is not a leaf");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not scalar");
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("at: index rank mismatch");
  std::size_t flat = 0, i = 0;
  for (std::size_t v : index) {
    if (v >= shape()[i]) throw ShapeError("at: index out of bounds");
    flat = flat * shape()[i] + v;
    ++i;
  }
  return node_->value[flat];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf) throw Error("set_requires_grad: tensor is not a leaf");
  node_->requires_grad = on;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }
void Tensor::zero_grad() { node_->grad.clear(); }
bool Tensor::is_leaf() const { return node_->is_leaf; }

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(shape(), node_->value, requires_grad);
}

void Tensor::backward() const {
  auto& root = *node_;
  if (root.value.size() != 1 || root.shape.size() > 1)
    throw ShapeError("backward: loss must be scalar, got " + to_string(root.shape));
  if (root.consumed) throw Error("backward: graph already consumed; rebuild it before calling again");
  if (!root.requires_grad) throw Error("backward: loss does not depend on any tensor requiring grad");

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf) continue;
    if (n->consumed) throw Error("backward: graph already consumed; rebuild it before calling again");
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (detail::Node* n : order) {
    if (n->is_leaf) continue;
    n->backward = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
    n->consumed = true;
  }
}

// ---- tape plumbing ------------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

std::uint64_t mac_count() { return g_macs; }
void reset_mac_count() { g_macs = 0; }
void add_macs(std::uint64_t n) { g_macs += n; }

void check_finite(const char* op, std::span<const double> values) {
  for (double v : values)
    if (!std::isfinite(v)) throw NumericFault(std::string(op) + ": produced a non-finite value");
}

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward) {
  check_finite(op, value);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// ---- primitives ---------------------------------------------------------------

void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  gemm_impl(ta, tb, m, n, k, a, b, c, accumulate);
}

void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const float* a,
          const float* b, float* c, bool accumulate) {
  gemm_impl(ta, tb, m, n, k, a, b, c, accumulate);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    shape_fail("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad)
      gemm(false, true, m, k, n, self.grad.data(), pb->value.data(), pa->grad_buffer().data(), true);
    if (pb->requires_grad)
      gemm(true, false, k, n, m, pa->value.data(), self.grad.data(), pb->grad_buffer().data(), true);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    shape_fail("matmul_nt", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> out(m * n);
  gemm(false, true, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return make_result("matmul_nt", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad)
      gemm(false, false, m, k, n, self.grad.data(), pb->value.data(), pa->grad_buffer().data(), true);
    if (pb->requires_grad)
      gemm(true, false, n, k, m, self.grad.data(), pa->value.data(), pb->grad_buffer().data(), true);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(
      "add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double s) {
  return unary(
      "mul_scalar", x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor sum(const Tensor& x) {
  auto v = x.data();
  double total = std::accumulate(v.begin(), v.end(), 0.0);
  return make_result("sum", {}, {total}, {x}, [](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (double& g : gp) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + to_string(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == ref[i];
    if (!ok) shape_fail("concat", ref, s);
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = prod(ref, 0, axis);
  const std::size_t inner = prod(ref, axis + 1, ref.size());
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);
  const std::size_t row = out_shape[axis] * inner;
  std::vector<double> out(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      auto src = parts[i].data();
      std::copy_n(src.data() + o * widths[i], widths[i], out.data() + o * row + off);
      off += widths[i];
    }
  }
  return make_result("concat", out_shape, std::move(out), parts,
                     [outer, widths, row](detail::Node& self) {
                       std::size_t off = 0;
                       for (std::size_t i = 0; i < self.parents.size(); ++i) {
                         auto& p = self.parents[i];
                         if (p->requires_grad) {
                           auto& gp = p->grad_buffer();
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t j = 0; j < widths[i]; ++j)
                               gp[o * widths[i] + j] += self.grad[o * row + off + j];
                         }
                         off += widths[i];
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis])
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " out of bounds for " + to_string(s));
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t outer = prod(s, 0, axis);
  const std::size_t inner = prod(s, axis + 1, s.size());
  const std::size_t src_row = s[axis] * inner, dst_row = (end - begin) * inner;
  const std::size_t off = begin * inner;
  std::vector<double> out(numel(out_shape));
  auto src = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(src.data() + o * src_row + off, dst_row, out.data() + o * dst_row);
  return make_result("slice", out_shape, std::move(out), {x},
                     [outer, src_row, dst_row, off](detail::Node& self) {
                       auto& gp = self.parents[0]->grad_buffer();
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t j = 0; j < dst_row; ++j)
                           gp[o * src_row + off + j] += self.grad[o * dst_row + j];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) shape_fail("reshape", x.shape(), shape);
  auto v = x.data();
  return make_result("reshape", std::move(shape), std::vector<double>(v.begin(), v.end()), {x},
                     [](detail::Node& self) {
                       auto& gp = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i];
                     });
}

Tensor swap_axes01(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("swap_axes01: rank < 2 for " + to_string(s));
  const std::size_t A = s[0], B = s[1], inner = prod(s, 2, s.size());
  Shape out_shape = s;
  std::swap(out_shape[0], out_shape[1]);
  std::vector<double> out(x.size());
  auto v = x.data();
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(v.data() + (a * B + b) * inner, inner, out.data() + (b * A + a) * inner);
  return make_result("swap_axes01", out_shape, std::move(out), {x},
                     [A, B, inner](detail::Node& self) {
                       auto& gp = self.parents[0]->grad_buffer();
                       for (std::size_t a = 0; a < A; ++a)
                         for (std::size_t b = 0; b < B; ++b)
                           for (std::size_t i = 0; i < inner; ++i)
                             gp[(a * B + b) * inner + i] += self.grad[(b * A + a) * inner + i];
                     });
}

Tensor transpose2d(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose2d: expected rank 2, got " + to_string(x.shape()));
  return swap_axes01(x);
}

Tensor pad_rows(const Tensor& x, std::size_t count) {
  if (x.rank() < 1) throw ShapeError("pad_rows: scalar input");
  if (count == 0) return x;
  Shape out_shape = x.shape();
  out_shape[0] += count;
  std::vector<double> out(numel(out_shape), 0.0);
  auto v = x.data();
  std::copy(v.begin(), v.end(), out.begin());
  const std::size_t n = x.size();
  return make_result("pad_rows", out_shape, std::move(out), {x}, [n](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) gp[i] += self.grad[i];
  });
}

// ---- gradient oracle ------------------------------------------------------------

std::vector<double> finite_difference_gradient(const std::function<Tensor(const Tensor&)>& f,
                                               const Tensor& x, double h) {
  if (!(h > 0.0)) throw Error("finite_difference_gradient: step must be positive");
  NoGradGuard guard;
  Tensor probe = x.clone();
  auto values = probe.mutable_data();
  std::vector<double> grad(values.size());
  auto eval = [&] {
    Tensor out = f(probe);
    if (out.size() != 1)
      throw ShapeError("finite_difference_gradient: f returned shape " + to_string(out.shape()));
    return out.item();
  };
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + h;
    const double up = eval();
    values[i] = orig - h;
    const double down = eval();
    values[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

// ---- serialization --------------------------------------------------------------

void write_tensor(std::ostream& out, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

Tensor read_tensor(std::istream& in) {
  const std::uint32_t rank = get_u32(in);
  if (rank > 16) throw Error("tensor blob: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get_u32(in);
  std::vector<double> data(numel(shape));
  for (double& v : data) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw Error("tensor blob: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    v = std::bit_cast<double>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

std::size_t serialized_size(const Tensor& t) { return 4 + 4 * t.rank() + 8 * t.size(); }

}  // namespace skim
