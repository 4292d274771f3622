#include "unite/autodiff/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "unite/autodiff/linalg.hpp"
#include "unite/error.hpp"

namespace unite::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_mat(const Tensor& t) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

MatMap as_mat(Tensor& t) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on an unbound Var");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape != &t) throw ContractError("operands recorded on different tapes");
  return t;
}

[[noreturn]] void shape_fail(const Tape& t, std::string_view op, const std::string& detail) {
  throw ShapeError("node #" + std::to_string(t.size()) + " (" + std::string(op) + "): " + detail);
}

void require_matrix(const Tape& t, std::string_view op, Var a) {
  if (a.value().rank() != 2) shape_fail(t, op, "expected a matrix, got " + shape_string(a.shape()));
}

void require_same(const Tape& t, std::string_view op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    shape_fail(t, op, "operand shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
  }
}

int next_id(const Tape& t) { return static_cast<int>(t.size()); }

template <typename F>
Var unary_elementwise(std::string_view op, Var a, F&& fwd_and_deriv) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  auto deriv = std::make_shared<std::vector<double>>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto [y, dy] = fwd_and_deriv(x[i]);
    out[i] = y;
    (*deriv)[i] = dy;
  }
  const int ia = a.id;
  return t.record(op, std::move(out), {a}, [ia, deriv](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(ia)) return;
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*deriv)[i];
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_matrix(t, "matmul", a);
  require_matrix(t, "matmul", b);
  if (a.value().cols() != b.value().rows()) {
    shape_fail(t, "matmul", "inner dimensions " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({a.value().rows(), b.value().cols()});
  as_mat(out).noalias() = as_mat(a.value()) * as_mat(b.value());
  const int ia = a.id, ib = b.id;
  return t.record("matmul", std::move(out), {a, b}, [ia, ib](Tape& tp, const Tensor& g) {
    if (tp.needs_grad(ia)) as_mat(tp.grad(ia)).noalias() += as_mat(g) * as_mat(tp.value(ib)).transpose();
    if (tp.needs_grad(ib)) as_mat(tp.grad(ib)).noalias() += as_mat(tp.value(ia)).transpose() * as_mat(g);
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  require_matrix(t, "transpose", a);
  Tensor out({a.value().cols(), a.value().rows()});
  as_mat(out) = as_mat(a.value()).transpose();
  const int ia = a.id;
  return t.record("transpose", std::move(out), {a}, [ia](Tape& tp, const Tensor& g) {
    if (tp.needs_grad(ia)) as_mat(tp.grad(ia)) += as_mat(g).transpose();
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same(t, "add", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const int ia = a.id, ib = b.id;
  return t.record("add", std::move(out), {a, b}, [ia, ib](Tape& tp, const Tensor& g) {
    for (int id : {ia, ib}) {
      if (!tp.needs_grad(id)) continue;
      Tensor& gi = tp.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same(t, "sub", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const int ia = a.id, ib = b.id;
  return t.record("sub", std::move(out), {a, b}, [ia, ib](Tape& tp, const Tensor& g) {
    if (tp.needs_grad(ia)) {
      Tensor& ga = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(ib)) {
      Tensor& gb = tp.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same(t, "mul", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const int ia = a.id, ib = b.id;
  return t.record("mul", std::move(out), {a, b}, [ia, ib](Tape& tp, const Tensor& g) {
    if (tp.needs_grad(ia)) {
      Tensor& ga = tp.grad(ia);
      const Tensor& vb = tp.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (tp.needs_grad(ib)) {
      Tensor& gb = tp.grad(ib);
      const Tensor& va = tp.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

namespace {

void require_row_operand(const Tape& t, std::string_view op, Var a, Var row) {
  require_matrix(t, op, a);
  const Tensor& r = row.value();
  const bool ok = (r.rank() == 1 || (r.rank() == 2 && r.rows() == 1)) && r.cols() == a.value().cols();
  if (!ok) shape_fail(t, op, "row operand " + shape_string(r.shape()) + " incompatible with " + shape_string(a.shape()));
}

void require_col_operand(const Tape& t, std::string_view op, Var a, Var col) {
  require_matrix(t, op, a);
  const Tensor& c = col.value();
  if (!(c.rank() == 2 && c.cols() == 1 && c.rows() == a.value().rows())) {
    shape_fail(t, op, "column operand " + shape_string(c.shape()) + " incompatible with " + shape_string(a.shape()));
  }
}

}  // namespace

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  require_row_operand(t, "add_row", a, row);
  Tensor out = a.value();
  const std::size_t n = out.rows(), m = out.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) += row.value()[j];
  const int ia = a.id, ir = row.id;
  return t.record("add_row", std::move(out), {a, row}, [ia, ir, n, m](Tape& tp, const Tensor& g) {
    if (tp.needs_grad(ia)) {
      Tensor& ga = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(ir)) {
      Tensor& gr = tp.grad(ir);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gr[j] += g(i, j);
    }
  });
}

Var mul_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  require_row_operand(t, "mul_row", a, row);
  Tensor out = a.value();
  const std::size_t n = out.rows(), m = out.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) *= row.value()[j];
  const int ia = a.id, ir = row.id;
  return t.record("mul_row", std::move(out), {a, row}, [ia, ir, n, m](Tape& tp, const Tensor& g) {
    const Tensor& va = tp.value(ia);
    const Tensor& vr = tp.value(ir);
    if (tp.needs_grad(ia)) {
      Tensor& ga = tp.grad(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) ga(i, j) += g(i, j) * vr[j];
    }
    if (tp.needs_grad(ir)) {
      Tensor& gr = tp.grad(ir);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gr[j] += g(i, j) * va(i, j);
    }
  });
}

Var add_col(Var a, Var col) {
  Tape& t = tape_of(a, col);
  require_col_operand(t, "add_col", a, col);
  Tensor out = a.value();
  const std::size_t n = out.rows(), m = out.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) += col.value()[i];
  const int ia = a.id, ic = col.id;
  return t.record("add_col", std::move(out), {a, col}, [ia, ic, n, m](Tape& tp, const Tensor& g) {
    if (tp.needs_grad(ia)) {
      Tensor& ga = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(ic)) {
      Tensor& gc = tp.grad(ic);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gc[i] += g(i, j);
    }
  });
}

Var mul_col(Var a, Var col) {
  Tape& t = tape_of(a, col);
  require_col_operand(t, "mul_col", a, col);
  Tensor out = a.value();
  const std::size_t n = out.rows(), m = out.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) *= col.value()[i];
  const int ia = a.id, ic = col.id;
  return t.record("mul_col", std::move(out), {a, col}, [ia, ic, n, m](Tape& tp, const Tensor& g) {
    const Tensor& va = tp.value(ia);
    const Tensor& vc = tp.value(ic);
    if (tp.needs_grad(ia)) {
      Tensor& ga = tp.grad(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) ga(i, j) += g(i, j) * vc[i];
    }
    if (tp.needs_grad(ic)) {
      Tensor& gc = tp.grad(ic);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gc[i] += g(i, j) * va(i, j);
    }
  });
}

Var scale(Var a, double factor) {
  return unary_elementwise("scale", a, [factor](double x) { return std::pair{x * factor, factor}; });
}

Var add_scalar(Var a, double offset) {
  return unary_elementwise("add_scalar", a, [offset](double x) { return std::pair{x + offset, 1.0}; });
}

Var mul_scalar(Var a, Var s) {
  Tape& t = tape_of(a, s);
  if (s.value().size() != 1) shape_fail(t, "mul_scalar", "scale operand has shape " + shape_string(s.shape()));
  Tensor out = a.value();
  const double sv = s.value()[0];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= sv;
  const int ia = a.id, is = s.id;
  return t.record("mul_scalar", std::move(out), {a, s}, [ia, is](Tape& tp, const Tensor& g) {
    if (tp.needs_grad(ia)) {
      const double sv = tp.value(is)[0];
      Tensor& ga = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
    }
    if (tp.needs_grad(is)) {
      const Tensor& va = tp.value(ia);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * va[i];
      tp.grad(is)[0] += acc;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of zero operands");
  Tape& t = tape_of(parts.front());
  const std::size_t n = parts.front().value().rows();
  std::size_t total = 0;
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    tape_of(parts.front(), p);
    require_matrix(t, "concat_cols", p);
    if (p.value().rows() != n) shape_fail(t, "concat_cols", "row counts differ: " + shape_string(p.shape()));
    total += p.value().cols();
    ids.push_back(p.id);
    widths.push_back(p.value().cols());
  }
  Tensor out({n, total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    as_mat(out).middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(p.value().cols())) =
        as_mat(p.value());
    offset += p.value().cols();
  }
  return t.record("concat_cols", std::move(out), parts, [ids, widths](Tape& tp, const Tensor& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.needs_grad(ids[k])) {
        as_mat(tp.grad(ids[k])) +=
            as_mat(g).middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(widths[k]));
      }
      off += widths[k];
    }
  });
}

Var exp(Var a) {
  return unary_elementwise("exp", a, [](double x) {
    const double e = std::exp(x);
    return std::pair{e, e};
  });
}

Var log(Var a) {
  return unary_elementwise("log", a, [](double x) { return std::pair{std::log(x), 1.0 / x}; });
}

Var sqrt(Var a) {
  return unary_elementwise("sqrt", a, [](double x) {
    const double r = std::sqrt(x);
    return std::pair{r, 0.5 / r};
  });
}

Var square(Var a) {
  return unary_elementwise("square", a, [](double x) { return std::pair{x * x, 2.0 * x}; });
}

Var sigmoid(Var a) {
  return unary_elementwise("sigmoid", a, [](double x) {
    const double s = stable_sigmoid(x);
    return std::pair{s, s * (1.0 - s)};
  });
}

Var softplus(Var a) {
  return unary_elementwise("softplus", a, [](double x) {
    const double y = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    return std::pair{y, stable_sigmoid(x)};
  });
}

Var relu(Var a) {
  return unary_elementwise("relu", a, [](double x) { return x > 0 ? std::pair{x, 1.0} : std::pair{0.0, 0.0}; });
}

Var clamp_min(Var a, double lower) {
  return unary_elementwise("clamp_min", a,
                           [lower](double x) { return x > lower ? std::pair{x, 1.0} : std::pair{lower, 0.0}; });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  require_matrix(t, "softmax_rows", a);
  Tensor out = a.value();
  const std::size_t n = out.rows(), m = out.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, out(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (out(i, j) = std::exp(out(i, j) - mx));
    for (std::size_t j = 0; j < m; ++j) out(i, j) /= z;
  }
  const int ia = a.id, self = next_id(t);
  return t.record("softmax_rows", std::move(out), {a}, [ia, self, n, m](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(ia)) return;
    const Tensor& y = tp.value(self);
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < m; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

Var layer_norm_rows(Var a, double eps) {
  Tape& t = tape_of(a);
  require_matrix(t, "layer_norm_rows", a);
  Tensor out = a.value();
  const std::size_t n = out.rows(), m = out.cols();
  auto inv_std = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < m; ++j) mu += out(i, j);
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (out(i, j) - mu) * (out(i, j) - mu);
    var /= static_cast<double>(m);
    const double r = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = r;
    for (std::size_t j = 0; j < m; ++j) out(i, j) = (out(i, j) - mu) * r;
  }
  const int ia = a.id, self = next_id(t);
  return t.record("layer_norm_rows", std::move(out), {a}, [ia, self, n, m, inv_std](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(ia)) return;
    const Tensor& y = tp.value(self);
    Tensor& ga = tp.grad(ia);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < n; ++i) {
      double mg = 0.0, mgy = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        mg += g(i, j);
        mgy += g(i, j) * y(i, j);
      }
      mg *= inv_m;
      mgy *= inv_m;
      for (std::size_t j = 0; j < m; ++j) ga(i, j) += (*inv_std)[i] * (g(i, j) - mg - y(i, j) * mgy);
    }
  });
}

Var attention(Var q, Var k, Var v, std::size_t seq_len, std::size_t n_heads, std::span<const unsigned char> key_mask) {
  Tape& t = tape_of(q, k);
  tape_of(q, v);
  constexpr std::string_view op = "attention";
  require_matrix(t, op, q);
  require_same(t, op, q, k);
  require_same(t, op, q, v);
  const std::size_t rows = q.value().rows(), dim = q.value().cols();
  if (seq_len == 0 || rows % seq_len != 0) shape_fail(t, op, "row count not a multiple of the sequence length");
  if (n_heads == 0 || dim % n_heads != 0) shape_fail(t, op, "model dimension not divisible by head count");
  if (key_mask.size() != rows) shape_fail(t, op, "key mask length differs from row count");
  const std::size_t n_seq = rows / seq_len, dh = dim / n_heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto L = static_cast<Eigen::Index>(seq_len);
  const auto DH = static_cast<Eigen::Index>(dh);

  auto probs = std::make_shared<std::vector<double>>(n_seq * n_heads * seq_len * seq_len);
  auto mask = std::make_shared<std::vector<unsigned char>>(key_mask.begin(), key_mask.end());
  Tensor out({rows, dim});
  ConstMatMap Q = as_mat(q.value()), K = as_mat(k.value()), V = as_mat(v.value());
  MatMap O = as_mat(out);
  RowMat scores(L, L);
  for (std::size_t s = 0; s < n_seq; ++s) {
    const auto r0 = static_cast<Eigen::Index>(s * seq_len);
    bool any = false;
    for (std::size_t j = 0; j < seq_len; ++j) any = any || (*mask)[s * seq_len + j];
    if (!any) throw ContractError("attention: sequence " + std::to_string(s) + " has no unmasked key");
    for (std::size_t h = 0; h < n_heads; ++h) {
      const auto c0 = static_cast<Eigen::Index>(h * dh);
      scores.noalias() = Q.block(r0, c0, L, DH) * K.block(r0, c0, L, DH).transpose();
      MatMap P(probs->data() + (s * n_heads + h) * seq_len * seq_len, L, L);
      for (Eigen::Index i = 0; i < L; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < L; ++j)
          if ((*mask)[s * seq_len + j]) mx = std::max(mx, scores(i, j) * scale_factor);
        double z = 0.0;
        for (Eigen::Index j = 0; j < L; ++j) {
          const double e = (*mask)[s * seq_len + j] ? std::exp(scores(i, j) * scale_factor - mx) : 0.0;
          P(i, j) = e;
          z += e;
        }
        P.row(i) /= z;
      }
      O.block(r0, c0, L, DH).noalias() = P * V.block(r0, c0, L, DH);
    }
  }
  const int iq = q.id, ik = k.id, iv = v.id;
  return t.record(op, std::move(out), {q, k, v},
                  [iq, ik, iv, probs, n_seq, n_heads, seq_len, dh, scale_factor](Tape& tp, const Tensor& g) {
                    const auto L = static_cast<Eigen::Index>(seq_len);
                    const auto DH = static_cast<Eigen::Index>(dh);
                    ConstMatMap Q = as_mat(tp.value(iq)), K = as_mat(tp.value(ik)), V = as_mat(tp.value(iv));
                    ConstMatMap G = as_mat(g);
                    const bool gq = tp.needs_grad(iq), gk = tp.needs_grad(ik), gv = tp.needs_grad(iv);
                    RowMat dP(L, L), dS(L, L);
                    for (std::size_t s = 0; s < n_seq; ++s) {
                      const auto r0 = static_cast<Eigen::Index>(s * seq_len);
                      for (std::size_t h = 0; h < n_heads; ++h) {
                        const auto c0 = static_cast<Eigen::Index>(h * dh);
                        ConstMatMap P(probs->data() + (s * n_heads + h) * seq_len * seq_len, L, L);
                        const auto dO = G.block(r0, c0, L, DH);
                        if (gv) as_mat(tp.grad(iv)).block(r0, c0, L, DH).noalias() += P.transpose() * dO;
                        if (!gq && !gk) continue;
                        dP.noalias() = dO * V.block(r0, c0, L, DH).transpose();
                        for (Eigen::Index i = 0; i < L; ++i) {
                          const double dot = dP.row(i).dot(P.row(i));
                          dS.row(i) = P.row(i).cwiseProduct((dP.row(i).array() - dot).matrix());
                        }
                        dS *= scale_factor;
                        if (gq) as_mat(tp.grad(iq)).block(r0, c0, L, DH).noalias() += dS * K.block(r0, c0, L, DH);
                        if (gk)
                          as_mat(tp.grad(ik)).block(r0, c0, L, DH).noalias() += dS.transpose() * Q.block(r0, c0, L, DH);
                      }
                    }
                  });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  Tape& t = tape_of(table);
  require_matrix(t, "gather_rows", table);
  if (ids.empty()) shape_fail(t, "gather_rows", "empty index list");
  const std::size_t n_rows = table.value().rows(), d = table.value().cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= n_rows) {
      shape_fail(t, "gather_rows", "index " + std::to_string(ids[i]) + " out of range " + std::to_string(n_rows));
    }
    std::copy_n(table.value().data().begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(ids.begin(), ids.end());
  const int it = table.id;
  return t.record("gather_rows", std::move(out), {table}, [it, idx, d](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(it)) return;
    Tensor& gt = tp.grad(it);
    for (std::size_t i = 0; i < idx->size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt((*idx)[i], j) += g(i, j);
  });
}

Var pool_segments(Var x, std::span<const double> weights, std::size_t seq_len) {
  Tape& t = tape_of(x);
  require_matrix(t, "pool_segments", x);
  const std::size_t rows = x.value().rows(), d = x.value().cols();
  if (seq_len == 0 || rows % seq_len != 0) shape_fail(t, "pool_segments", "row count not a multiple of seq_len");
  if (weights.size() != rows) shape_fail(t, "pool_segments", "weight count differs from row count");
  const std::size_t n_seq = rows / seq_len;
  Tensor out({n_seq, d});
  const Tensor& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    if (weights[r] == 0.0) continue;
    const std::size_t s = r / seq_len;
    for (std::size_t j = 0; j < d; ++j) out(s, j) += weights[r] * xv(r, j);
  }
  auto w = std::make_shared<std::vector<double>>(weights.begin(), weights.end());
  const int ix = x.id;
  return t.record("pool_segments", std::move(out), {x}, [ix, w, seq_len, d](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(ix)) return;
    Tensor& gx = tp.grad(ix);
    for (std::size_t r = 0; r < w->size(); ++r) {
      if ((*w)[r] == 0.0) continue;
      const std::size_t s = r / seq_len;
      for (std::size_t j = 0; j < d; ++j) gx(r, j) += (*w)[r] * g(s, j);
    }
  });
}

Var cholesky(Var a) {
  Tape& t = tape_of(a);
  require_matrix(t, "cholesky", a);
  if (a.value().rows() != a.value().cols()) shape_fail(t, "cholesky", "matrix not square: " + shape_string(a.shape()));
  Tensor out = cholesky_lower(a.value(), false);
  const int ia = a.id, self = next_id(t);
  return t.record("cholesky", std::move(out), {a}, [ia, self](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(ia)) return;
    // S = L^-T Phi(L^T Lbar) L^-1, Abar = (S + S^T) / 2, where Phi keeps the
    // lower triangle and halves the diagonal.
    ConstMatMap L = as_mat(tp.value(self));
    RowMat Lbar = as_mat(g).triangularView<Eigen::Lower>();
    RowMat P = (L.transpose() * Lbar).triangularView<Eigen::Lower>();
    P.diagonal() *= 0.5;
    RowMat X = L.transpose().triangularView<Eigen::Upper>().solve(P);
    RowMat S = L.transpose().triangularView<Eigen::Upper>().solve(X.transpose()).transpose();
    as_mat(tp.grad(ia)) += 0.5 * (S + S.transpose());
  });
}

Var tri_solve(Var lower, Var b, Side side) {
  Tape& t = tape_of(lower, b);
  require_matrix(t, "tri_solve", lower);
  require_matrix(t, "tri_solve", b);
  const std::size_t n = lower.value().rows();
  if (lower.value().cols() != n || b.value().rows() != n) {
    shape_fail(t, "tri_solve", "system " + shape_string(lower.shape()) + " with rhs " + shape_string(b.shape()));
  }
  Tensor out(b.shape());
  ConstMatMap L = as_mat(lower.value());
  if (side == Side::lower) {
    as_mat(out) = L.triangularView<Eigen::Lower>().solve(as_mat(b.value()));
  } else {
    as_mat(out) = L.transpose().triangularView<Eigen::Upper>().solve(as_mat(b.value()));
  }
  const int il = lower.id, ib = b.id, self = next_id(t);
  return t.record("tri_solve", std::move(out), {lower, b}, [il, ib, self, side](Tape& tp, const Tensor& g) {
    ConstMatMap L = as_mat(tp.value(il));
    ConstMatMap X = as_mat(tp.value(self));
    RowMat bbar;
    if (side == Side::lower) {
      bbar = L.transpose().triangularView<Eigen::Upper>().solve(as_mat(g));
    } else {
      bbar = L.triangularView<Eigen::Lower>().solve(as_mat(g));
    }
    if (tp.needs_grad(ib)) as_mat(tp.grad(ib)) += bbar;
    if (tp.needs_grad(il)) {
      RowMat lbar = side == Side::lower ? RowMat(-(bbar * X.transpose())) : RowMat(-(X * bbar.transpose()));
      as_mat(tp.grad(il)) += RowMat(lbar.triangularView<Eigen::Lower>());
    }
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  const int ia = a.id;
  return t.record("sum", Tensor::scalar(s), {a}, [ia](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(ia)) return;
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

Var mean(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  const double n = static_cast<double>(a.value().size());
  const int ia = a.id;
  return t.record("mean", Tensor::scalar(s / n), {a}, [ia, n](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(ia)) return;
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] / n;
  });
}

Var sum_rows(Var a) {
  Tape& t = tape_of(a);
  require_matrix(t, "sum_rows", a);
  Tensor out({1, a.value().cols()});
  as_mat(out) = as_mat(a.value()).colwise().sum();
  const int ia = a.id;
  return t.record("sum_rows", std::move(out), {a}, [ia](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(ia)) return;
    as_mat(tp.grad(ia)).rowwise() += as_mat(g).row(0);
  });
}

Var diag(Var a) {
  Tape& t = tape_of(a);
  require_matrix(t, "diag", a);
  const std::size_t n = a.value().rows();
  if (a.value().cols() != n) shape_fail(t, "diag", "matrix not square: " + shape_string(a.shape()));
  Tensor out({1, n});
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()(i, i);
  const int ia = a.id;
  return t.record("diag", std::move(out), {a}, [ia, n](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(ia)) return;
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < n; ++i) ga(i, i) += g[i];
  });
}

Var sqdist(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_matrix(t, "sqdist", a);
  require_matrix(t, "sqdist", b);
  const std::size_t n = a.value().rows(), m = b.value().rows(), d = a.value().cols();
  if (b.value().cols() != d) {
    shape_fail(t, "sqdist", "dimensions differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor out({n, m});
  const Tensor &va = a.value(), &vb = b.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = va(i, k) - vb(j, k);
        s += diff * diff;
      }
      out(i, j) = s;
    }
  const int ia = a.id, ib = b.id;
  return t.record("sqdist", std::move(out), {a, b}, [ia, ib, n, m, d](Tape& tp, const Tensor& g) {
    const Tensor &va = tp.value(ia), &vb = tp.value(ib);
    const bool ga_on = tp.needs_grad(ia), gb_on = tp.needs_grad(ib);
    Tensor* ga = ga_on ? &tp.grad(ia) : nullptr;
    Tensor* gb = gb_on ? &tp.grad(ib) : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double gij = 2.0 * g(i, j);
        if (gij == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = gij * (va(i, k) - vb(j, k));
          if (ga) (*ga)(i, k) += diff;
          if (gb) (*gb)(j, k) -= diff;
        }
      }
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  Tape& t = tape_of(logits);
  require_matrix(t, "cross_entropy", logits);
  const std::size_t n = logits.value().rows(), c = logits.value().cols();
  if (labels.size() != n) shape_fail(t, "cross_entropy", "label count differs from row count");
  auto probs = std::make_shared<Tensor>(logits.value().shape());
  auto y = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if ((*y)[i] < 0 || static_cast<std::size_t>((*y)[i]) >= c) {
      shape_fail(t, "cross_entropy", "label " + std::to_string((*y)[i]) + " out of range");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, logits.value()(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += ((*probs)(i, j) = std::exp(logits.value()(i, j) - mx));
    for (std::size_t j = 0; j < c; ++j) (*probs)(i, j) /= z;
    loss += mx + std::log(z) - logits.value()(i, static_cast<std::size_t>((*y)[i]));
  }
  const int il = logits.id;
  return t.record("cross_entropy", Tensor::scalar(loss / static_cast<double>(n)), {logits},
                  [il, probs, y, n, c](Tape& tp, const Tensor& g) {
                    if (!tp.needs_grad(il)) return;
                    Tensor& gl = tp.grad(il);
                    const double f = g[0] / static_cast<double>(n);
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < c; ++j) {
                        const double target = static_cast<int>(j) == (*y)[i] ? 1.0 : 0.0;
                        gl(i, j) += f * ((*probs)(i, j) - target);
                      }
                  });
}

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }
Var operator*(Var a, double s) { return scale(a, s); }
Var operator*(double s, Var a) { return scale(a, s); }
Var operator-(Var a) { return scale(a, -1.0); }

}  // namespace unite::ad
