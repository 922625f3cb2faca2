#include "dlrgrid/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dlrgrid/checkpoint.hpp"
#include "dlrgrid/errors.hpp"
#include "dlrgrid/kernels.hpp"
#include "dlrgrid/pinball.hpp"

namespace dlrgrid::autodiff {

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::param(Param& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.value = p.value;
  n.requires_grad = p.trainable;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::vector<std::size_t> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [&](std::size_t i) { return nodes_[i].requires_grad; });
  n.leaf = false;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Matrix& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  const Node& root = nodes_.at(loss.id);
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw NonScalarLoss("backward needs a 1x1 loss, got " + root.value.shape_string());
  }
  for (auto& n : nodes_) n.grad = Matrix();
  if (!root.requires_grad) return;
  grad_buffer(loss.id)(0, 0) = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.leaf || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    nodes_[id].grad = Matrix();  // intermediate gradients are not retained
  }
}

Matrix Tape::grad(Var leaf) const {
  const Node& n = nodes_.at(leaf.id);
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Tape::gradient(const Param& p) const {
  const auto it = param_nodes_.find(&p);
  if (it == param_nodes_.end()) return Matrix(p.value.rows(), p.value.cols());
  return grad({const_cast<Tape*>(this), it->second});
}

namespace {

[[noreturn]] void mismatch(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeMismatch(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                      b.shape_string());
}

Tape& same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw InvalidArgument("operands on different tapes");
  return *a.tape;
}

void accumulate(Matrix& dst, const Matrix& src) {
  kernels::active().axpy(dst.size(), 1.0, src.data(), dst.data());
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) mismatch("matmul", av, bv);
  return t.record(dlrgrid::matmul(av, bv), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_of(self);
    const Matrix& av = tp.value({&tp, a});
    const Matrix& bv = tp.value({&tp, b});
    const auto& k = kernels::active();
    if (tp.requires_grad(a)) {
      Matrix& ga = tp.grad_buffer(a);
      k.gemm_nt(g.rows(), g.cols(), bv.rows(), g.data(), bv.data(), ga.data(), true);
    }
    if (tp.requires_grad(b)) {
      Matrix& gb = tp.grad_buffer(b);
      k.gemm_tn(av.rows(), g.cols(), av.cols(), av.data(), g.data(), gb.data(), true);
    }
  });
}

Var sparse_dense_matmul(const CsrMatrix& s, Var x) {
  const Matrix& xv = x.value();
  if (s.cols != xv.rows()) {
    throw ShapeMismatch("sparse_dense_matmul: incompatible shapes (" + std::to_string(s.rows) +
                        "x" + std::to_string(s.cols) + ") and " + xv.shape_string());
  }
  const CsrMatrix* sp = &s;
  return x.tape->record(spmm(s, xv), {x.id}, [sp, x = x.id](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(x)) return;
    accumulate(tp.grad_buffer(x), spmm_tn(*sp, tp.grad_of(self)));
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (!av.same_shape(bv)) mismatch("add", av, bv);
  Matrix out = av;
  accumulate(out, bv);
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    for (auto in : {a, b}) {
      if (tp.requires_grad(in)) accumulate(tp.grad_buffer(in), tp.grad_of(self));
    }
  });
}

Var row_broadcast_add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) mismatch("row_broadcast_add", av, bv);
  Matrix out = av;
  const auto& k = kernels::active();
  for (std::size_t r = 0; r < out.rows(); ++r) k.axpy(out.cols(), 1.0, bv.data(), out.row(r).data());
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_of(self);
    if (tp.requires_grad(a)) accumulate(tp.grad_buffer(a), g);
    if (tp.requires_grad(b)) {
      Matrix& gb = tp.grad_buffer(b);
      const auto& k = kernels::active();
      for (std::size_t r = 0; r < g.rows(); ++r) k.axpy(g.cols(), 1.0, g.row(r).data(), gb.data());
    }
  });
}

Var sigmoid(Var a) {
  Matrix out = a.value();
  for (double& v : out.flat()) v = 1.0 / (1.0 + std::exp(-v));
  return a.tape->record(std::move(out), {a.id}, [a = a.id](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(a)) return;
    const Matrix& g = tp.grad_of(self);
    const Matrix& y = tp.value({&tp, self});
    Matrix& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = y.flat()[i];
      ga.flat()[i] += g.flat()[i] * s * (1.0 - s);
    }
  });
}

Var tanh(Var a) {
  Matrix out = a.value();
  for (double& v : out.flat()) v = std::tanh(v);
  return a.tape->record(std::move(out), {a.id}, [a = a.id](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(a)) return;
    const Matrix& g = tp.grad_of(self);
    const Matrix& y = tp.value({&tp, self});
    Matrix& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double th = y.flat()[i];
      ga.flat()[i] += g.flat()[i] * (1.0 - th * th);
    }
  });
}

Var hadamard(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (!av.same_shape(bv)) mismatch("hadamard", av, bv);
  Matrix out(av.rows(), av.cols());
  kernels::active().hadamard(out.size(), av.data(), bv.data(), out.data());
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_of(self);
    const auto& k = kernels::active();
    if (tp.requires_grad(a)) {
      k.hadamard_acc(g.size(), g.data(), tp.value({&tp, b}).data(), tp.grad_buffer(a).data());
    }
    if (tp.requires_grad(b)) {
      k.hadamard_acc(g.size(), g.data(), tp.value({&tp, a}).data(), tp.grad_buffer(b).data());
    }
  });
}

Var concat_columns(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_columns of nothing");
  Tape& t = *parts.front().tape;
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.tape != &t) throw InvalidArgument("operands on different tapes");
    if (p.rows() != rows) mismatch("concat_columns", parts.front().value(), p.value());
    cols += p.cols();
    ids.push_back(p.id);
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += v.cols();
  }
  return t.record(std::move(out), ids, [ids](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_of(self);
    std::size_t offset = 0;
    for (auto id : ids) {
      const std::size_t c = tp.value({&tp, id}).cols();
      if (tp.requires_grad(id)) {
        Matrix& gi = tp.grad_buffer(id);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          kernels::active().axpy(c, 1.0, g.row(r).data() + offset, gi.row(r).data());
        }
      }
      offset += c;
    }
  });
}

Var slice_columns(Var a, std::size_t first, std::size_t count) {
  const Matrix& av = a.value();
  if (first + count > av.cols()) {
    throw ShapeMismatch("slice_columns [" + std::to_string(first) + ", " +
                        std::to_string(first + count) + ") out of " + av.shape_string());
  }
  Matrix out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::copy_n(av.row(r).begin() + static_cast<std::ptrdiff_t>(first), count, out.row(r).begin());
  }
  return a.tape->record(std::move(out), {a.id}, [a = a.id, first](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(a)) return;
    const Matrix& g = tp.grad_of(self);
    Matrix& ga = tp.grad_buffer(a);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      kernels::active().axpy(g.cols(), 1.0, g.row(r).data(), ga.row(r).data() + first);
    }
  });
}

Var slice_rows(Var a, std::size_t first, std::size_t count) {
  const Matrix& av = a.value();
  if (first + count > av.rows()) {
    throw ShapeMismatch("slice_rows [" + std::to_string(first) + ", " +
                        std::to_string(first + count) + ") out of " + av.shape_string());
  }
  std::vector<double> data(av.data() + first * av.cols(), av.data() + (first + count) * av.cols());
  return a.tape->record(Matrix(count, av.cols(), std::move(data)), {a.id},
                        [a = a.id, first](Tape& tp, std::size_t self) {
                          if (!tp.requires_grad(a)) return;
                          const Matrix& g = tp.grad_of(self);
                          Matrix& ga = tp.grad_buffer(a);
                          kernels::active().axpy(g.size(), 1.0, g.data(),
                                                 ga.data() + first * ga.cols());
                        });
}

Var scalar_scale(Var a, double s) {
  Matrix out = a.value();
  for (double& v : out.flat()) v *= s;
  return a.tape->record(std::move(out), {a.id}, [a = a.id, s](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(a)) return;
    const Matrix& g = tp.grad_of(self);
    kernels::active().axpy(g.size(), s, g.data(), tp.grad_buffer(a).data());
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().flat()) s += v;
  return a.tape->record(Matrix(1, 1, s), {a.id}, [a = a.id](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(a)) return;
    const double g = tp.grad_of(self)(0, 0);
    for (double& v : tp.grad_buffer(a).flat()) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeMismatch("mean of an empty matrix");
  return scalar_scale(sum(a), 1.0 / static_cast<double>(n));
}

Var pinball_elem(Var pred, const Matrix& target, double level) {
  const Matrix& pv = pred.value();
  if (!pv.same_shape(target)) mismatch("pinball_elem", pv, target);
  if (!(level > 0.0 && level < 1.0)) {
    throw LevelOutOfRange("quantile level " + std::to_string(level) + " not in (0, 1)");
  }
  Matrix out(pv.rows(), pv.cols());
  Tape& t = *pred.tape;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double y = target.flat()[i], yhat = pv.flat()[i];
    out.flat()[i] = pinball(level, y, yhat);
    t.note_kink_sign(static_cast<signed char>((y > yhat) - (y < yhat)));
  }
  return t.record(std::move(out), {pred.id},
                  [p = pred.id, target, level](Tape& tp, std::size_t self) {
                    if (!tp.requires_grad(p)) return;
                    const Matrix& g = tp.grad_of(self);
                    const Matrix& pv = tp.value({&tp, p});
                    Matrix& gp = tp.grad_buffer(p);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      gp.flat()[i] +=
                          g.flat()[i] * pinball_grad(level, target.flat()[i], pv.flat()[i]);
                    }
                  });
}

GradCheckReport grad_check(const std::function<Var(Tape&)>& loss_fn,
                           std::span<Param* const> params, double epsilon, Stencil stencil) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) {
    throw InvalidArgument("grad_check epsilon must be in (0, 1e-2]");
  }
  GradCheckReport report;
  std::vector<Matrix> analytic;
  std::vector<signed char> base_signs;
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
    for (Param* p : params) analytic.push_back(tape.gradient(*p));
    base_signs = tape.kink_signs();
  }
  auto evaluate = [&](std::vector<signed char>& signs) {
    Tape tape;
    const double v = loss_fn(tape).value()(0, 0);
    signs = tape.kink_signs();
    return v;
  };

  std::vector<signed char> signs;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value.flat()[i];
      bool crossed = false;
      auto at = [&](double offset) {
        p.value.flat()[i] = saved + offset;
        const double v = evaluate(signs);
        crossed = crossed || signs != base_signs;
        return v;
      };
      double numeric = 0.0;
      if (stencil == Stencil::Central) {
        numeric = (at(epsilon) - at(-epsilon)) / (2.0 * epsilon);
      } else {
        numeric = (8.0 * (at(epsilon) - at(-epsilon)) - (at(2.0 * epsilon) - at(-2.0 * epsilon))) /
                  (12.0 * epsilon);
      }
      p.value.flat()[i] = saved;
      if (crossed) {
        ++report.skipped;
        continue;
      }
      const double a = analytic[pi].flat()[i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double err = scale < 1e-8 ? std::abs(a - numeric) : std::abs(a - numeric) / scale;
      ++report.checked;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_param = p.name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

void adamw_step(std::span<Param> params, std::span<const Matrix> grads, AdamWState& state,
                const AdamWConfig& config) {
  if (params.size() != grads.size()) {
    throw ShapeMismatch("adamw_step: " + std::to_string(params.size()) + " params but " +
                        std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].value.same_shape(grads[i])) {
      throw ShapeMismatch("adamw_step: gradient for " + params[i].name + " has shape " +
                          grads[i].shape_string() + ", parameter " +
                          params[i].value.shape_string());
    }
    for (double g : grads[i].flat()) {
      if (!std::isfinite(g)) throw NonFiniteGradient("non-finite gradient for " + params[i].name);
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.rows(), p.value.cols());
      state.v.emplace_back(p.value.rows(), p.value.cols());
    }
  }
  if (state.m.size() != params.size()) {
    throw InvalidArgument("adamw_step: optimizer state tracks a different parameter list");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params[i];
    if (!p.trainable) continue;
    auto w = p.value.flat();
    auto g = grads[i].flat();
    auto m = state.m[i].flat();
    auto v = state.v[i].flat();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] -= config.lr * (m_hat / (std::sqrt(v_hat) + config.eps) + config.weight_decay * w[j]);
    }
  }
}

nlohmann::json params_to_json(std::span<const Param> params) {
  nlohmann::json doc;
  doc["format"] = "dlrgrid.params";
  doc["version"] = kParamFormatVersion;
  auto& list = doc["params"] = nlohmann::json::array();
  for (const auto& p : params) {
    list.push_back({{"name", p.name},
                    {"shape", {p.value.rows(), p.value.cols()}},
                    {"trainable", p.trainable},
                    {"values", std::vector<double>(p.value.flat().begin(), p.value.flat().end())}});
  }
  return doc;
}

std::vector<Param> params_from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "dlrgrid.params") {
    throw InvalidArgument("not a dlrgrid parameter container");
  }
  const int version = doc.value("version", 0);
  if (version != kParamFormatVersion) {
    throw InvalidArgument("unsupported parameter container version " + std::to_string(version));
  }
  std::vector<Param> out;
  for (const auto& item : doc.at("params")) {
    const auto shape = item.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw InvalidArgument("parameter shape must have two entries");
    out.push_back({item.at("name").get<std::string>(),
                   Matrix(shape[0], shape[1], item.at("values").get<std::vector<double>>()),
                   item.value("trainable", true)});
  }
  return out;
}

void save_params(const std::filesystem::path& path, std::span<const Param> params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << params_to_json(params).dump() << '\n';
}

std::vector<Param> load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("cannot open " + path.string());
  return params_from_json(nlohmann::json::parse(in));
}

}  // namespace dlrgrid::autodiff
