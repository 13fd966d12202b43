#include "koala/tape.hpp"

#include <cmath>
#include <sstream>

namespace koala {

namespace {

constexpr double kMaskNegative = -1e30;

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
    throw InputError(std::string(op) + ": " + detail);
}

void require_2d(const char* op, const Tensor& t) {
    if (t.rank() != 2) shape_error(op, "expected rank-2 tensor, got " + t.shape_str());
}

void finish(Tensor& out, const char* op) {
    out.quantize_inplace();
    if (!out.all_finite()) throw NumericError(std::string(op) + ": non-finite output");
}

} // namespace

NodeId Tape::push(Tensor value, std::vector<NodeId> parents, BackFn back, const char* op) {
    finish(value, op);
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.back = std::move(back);
    n.op = op;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::constant(Tensor value, const char* op) {
    return push(std::move(value), {}, nullptr, op);
}

NodeId Tape::leaf(Tensor value, bool retain_grad) {
    NodeId id = push(std::move(value), {}, nullptr, "leaf");
    nodes_[static_cast<std::size_t>(id)].retain = retain_grad;
    return id;
}

void Tape::clear() {
    nodes_.clear();
    grads_.clear();
    ran_backward_ = false;
}

void Tape::accumulate(NodeId id, const Tensor& g) {
    Tensor& slot = grads_[static_cast<std::size_t>(id)];
    if (slot.v.empty()) {
        slot = g;
        return;
    }
    for (std::size_t i = 0; i < slot.v.size(); ++i) slot.v[i] += g.v[i];
}

void Tape::backward(NodeId loss) {
    const Tensor& lv = value(loss);
    if (lv.numel() != 1) throw ContractError("backward: loss must be scalar, got " + lv.shape_str());
    grads_.assign(nodes_.size(), Tensor{});
    grads_[static_cast<std::size_t>(loss)] = Tensor::full({1}, 1.0);
    for (NodeId id = loss; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (grads_[static_cast<std::size_t>(id)].v.empty()) continue;
        if (n.back) n.back(*this, id);
    }
    // Gradients of non-leaf intermediates are dropped; only parameter leaves keep theirs.
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!nodes_[i].retain) grads_[i] = Tensor{};
    }
    ran_backward_ = true;
}

bool Tape::has_grad(NodeId id) const {
    return ran_backward_ && !grads_[static_cast<std::size_t>(id)].v.empty();
}

const Tensor& Tape::grad(NodeId id) const {
    if (!ran_backward_) throw ContractError("grad: backward has not run");
    const Tensor& g = grads_[static_cast<std::size_t>(id)];
    if (g.v.empty()) throw ContractError("grad: no gradient retained for node");
    return g;
}

// ---- primitives -----------------------------------------------------------

NodeId add(Tape& t, NodeId a, NodeId b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!av.same_shape(bv)) shape_error("add", av.shape_str() + " vs " + bv.shape_str());
    Tensor out = av;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = av.v[i] + bv.v[i];
    return t.push(std::move(out), {a, b},
                  [a, b](Tape& tp, NodeId id) {
                      const Tensor& g = tp.out_grad(id);
                      tp.accumulate(a, g);
                      tp.accumulate(b, g);
                  },
                  "add");
}

NodeId mul(Tape& t, NodeId a, NodeId b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!av.same_shape(bv)) shape_error("mul", av.shape_str() + " vs " + bv.shape_str());
    Tensor out = av;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = av.v[i] * bv.v[i];
    return t.push(std::move(out), {a, b},
                  [a, b](Tape& tp, NodeId id) {
                      const Tensor& g = tp.out_grad(id);
                      const Tensor& av2 = tp.value(a);
                      const Tensor& bv2 = tp.value(b);
                      Tensor da = av2, db = bv2;
                      for (std::size_t i = 0; i < g.v.size(); ++i) {
                          da.v[i] = g.v[i] * bv2.v[i];
                          db.v[i] = g.v[i] * av2.v[i];
                      }
                      tp.accumulate(a, da);
                      tp.accumulate(b, db);
                  },
                  "mul");
}

NodeId scale(Tape& t, NodeId a, double c) {
    Tensor out = t.value(a);
    for (double& x : out.v) x *= c;
    return t.push(std::move(out), {a},
                  [a, c](Tape& tp, NodeId id) {
                      Tensor g = tp.out_grad(id);
                      for (double& x : g.v) x *= c;
                      tp.accumulate(a, g);
                  },
                  "scale");
}

NodeId scale_by(Tape& t, NodeId a, NodeId s) {
    const Tensor& sv = t.value(s);
    if (sv.numel() != 1) shape_error("scale_by", "scalar operand must have one element");
    const double c = sv.v[0];
    Tensor out = t.value(a);
    for (double& x : out.v) x *= c;
    return t.push(std::move(out), {a, s},
                  [a, s, c](Tape& tp, NodeId id) {
                      const Tensor& g = tp.out_grad(id);
                      const Tensor& av = tp.value(a);
                      Tensor da = av;
                      double ds = 0.0;
                      for (std::size_t i = 0; i < g.v.size(); ++i) {
                          da.v[i] = g.v[i] * c;
                          ds += g.v[i] * av.v[i];
                      }
                      tp.accumulate(a, da);
                      tp.accumulate(s, Tensor::full({1}, ds));
                  },
                  "scale_by");
}

NodeId add_bias(Tape& t, NodeId x, NodeId b) {
    const Tensor& xv = t.value(x);
    const Tensor& bv = t.value(b);
    require_2d("add_bias", xv);
    if (bv.numel() != xv.cols())
        shape_error("add_bias", "bias " + bv.shape_str() + " vs cols of " + xv.shape_str());
    Tensor out = xv;
    const std::size_t n = xv.rows(), d = xv.cols();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out.v[i * d + j] = xv.v[i * d + j] + bv.v[j];
    return t.push(std::move(out), {x, b},
                  [x, b, n, d](Tape& tp, NodeId id) {
                      const Tensor& g = tp.out_grad(id);
                      tp.accumulate(x, g);
                      Tensor db = Tensor::zeros({d});
                      for (std::size_t i = 0; i < n; ++i)
                          for (std::size_t j = 0; j < d; ++j) db.v[j] += g.v[i * d + j];
                      tp.accumulate(b, db);
                  },
                  "add_bias");
}

namespace {

Tensor raw_matmul(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = &a.v[i * k];
        double* orow = &out.v[i * m];
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = &b.v[p * m];
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor raw_matmul_nt(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = &a.v[i * k];
        double* orow = &out.v[i * m];
        for (std::size_t j = 0; j < m; ++j) {
            const double* brow = &b.v[j * k];
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            orow[j] = acc;
        }
    }
    return out;
}

Tensor raw_matmul_tn(const Tensor& a, const Tensor& b) {
    // a^T . b for a[n x k], b[n x m] -> [k x m]
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor out({k, m});
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = &a.v[i * k];
        const double* brow = &b.v[i * m];
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* orow = &out.v[p * m];
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

} // namespace

NodeId matmul(Tape& t, NodeId a, NodeId b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_2d("matmul", av);
    require_2d("matmul", bv);
    if (av.cols() != bv.rows())
        shape_error("matmul", "inner dims disagree: " + av.shape_str() + " . " + bv.shape_str());
    return t.push(raw_matmul(av, bv), {a, b},
                  [a, b](Tape& tp, NodeId id) {
                      const Tensor& g = tp.out_grad(id);
                      tp.accumulate(a, raw_matmul_nt(g, tp.value(b)));
                      tp.accumulate(b, raw_matmul_tn(tp.value(a), g));
                  },
                  "matmul");
}

NodeId matmul_nt(Tape& t, NodeId a, NodeId b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require_2d("matmul_nt", av);
    require_2d("matmul_nt", bv);
    if (av.cols() != bv.cols())
        shape_error("matmul_nt", "inner dims disagree: " + av.shape_str() + " . " + bv.shape_str() + "^T");
    return t.push(raw_matmul_nt(av, bv), {a, b},
                  [a, b](Tape& tp, NodeId id) {
                      const Tensor& g = tp.out_grad(id);
                      tp.accumulate(a, raw_matmul(g, tp.value(b)));
                      tp.accumulate(b, raw_matmul_tn(g, tp.value(a)));
                  },
                  "matmul_nt");
}

NodeId softmax_rows(Tape& t, NodeId x) {
    const Tensor& xv = t.value(x);
    require_2d("softmax_rows", xv);
    const std::size_t n = xv.rows(), d = xv.cols();
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = &xv.v[i * d];
        double mx = row[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double e = std::exp(row[j] - mx);
            out.v[i * d + j] = e;
            sum += e;
        }
        for (std::size_t j = 0; j < d; ++j) out.v[i * d + j] /= sum;
    }
    return t.push(std::move(out), {x},
                  [x, n, d](Tape& tp, NodeId id) {
                      const Tensor& g = tp.out_grad(id);
                      const Tensor& y = tp.value(id);
                      Tensor dx({n, d});
                      for (std::size_t i = 0; i < n; ++i) {
                          double dot = 0.0;
                          for (std::size_t j = 0; j < d; ++j) dot += g.v[i * d + j] * y.v[i * d + j];
                          for (std::size_t j = 0; j < d; ++j)
                              dx.v[i * d + j] = y.v[i * d + j] * (g.v[i * d + j] - dot);
                      }
                      tp.accumulate(x, dx);
                  },
                  "softmax_rows");
}

NodeId log_softmax_rows(Tape& t, NodeId x) {
    const Tensor& xv = t.value(x);
    require_2d("log_softmax_rows", xv);
    const std::size_t n = xv.rows(), d = xv.cols();
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = &xv.v[i * d];
        double mx = row[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) sum += std::exp(row[j] - mx);
        const double lse = mx + std::log(sum);
        for (std::size_t j = 0; j < d; ++j) out.v[i * d + j] = row[j] - lse;
    }
    return t.push(std::move(out), {x},
                  [x, n, d](Tape& tp, NodeId id) {
                      const Tensor& g = tp.out_grad(id);
                      const Tensor& y = tp.value(id); // log-probs
                      Tensor dx({n, d});
                      for (std::size_t i = 0; i < n; ++i) {
                          double gsum = 0.0;
                          for (std::size_t j = 0; j < d; ++j) gsum += g.v[i * d + j];
                          for (std::size_t j = 0; j < d; ++j)
                              dx.v[i * d + j] = g.v[i * d + j] - std::exp(y.v[i * d + j]) * gsum;
                      }
                      tp.accumulate(x, dx);
                  },
                  "log_softmax_rows");
}

NodeId layer_norm(Tape& t, NodeId x, NodeId gain, NodeId bias) {
    constexpr double eps = 1e-5;
    const Tensor& xv = t.value(x);
    const Tensor& gv = t.value(gain);
    const Tensor& bv = t.value(bias);
    require_2d("layer_norm", xv);
    const std::size_t n = xv.rows(), d = xv.cols();
    if (gv.numel() != d || bv.numel() != d)
        shape_error("layer_norm", "gain/bias must have " + std::to_string(d) + " elements");
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = &xv.v[i * d];
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j)
            out.v[i * d + j] = (row[j] - mean) * inv * gv.v[j] + bv.v[j];
    }
    return t.push(std::move(out), {x, gain, bias},
                  [x, gain, bias, n, d](Tape& tp, NodeId id) {
                      const Tensor& g = tp.out_grad(id);
                      const Tensor& xv2 = tp.value(x);
                      const Tensor& gv2 = tp.value(gain);
                      Tensor dx({n, d});
                      Tensor dgain = Tensor::zeros({d});
                      Tensor dbias = Tensor::zeros({d});
                      for (std::size_t i = 0; i < n; ++i) {
                          const double* row = &xv2.v[i * d];
                          double mean = 0.0;
                          for (std::size_t j = 0; j < d; ++j) mean += row[j];
                          mean /= static_cast<double>(d);
                          double var = 0.0;
                          for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
                          var /= static_cast<double>(d);
                          const double inv = 1.0 / std::sqrt(var + eps);
                          // dy = g * gain on the normalized value; fold the two row means back in.
                          double m1 = 0.0, m2 = 0.0;
                          for (std::size_t j = 0; j < d; ++j) {
                              const double xh = (row[j] - mean) * inv;
                              const double dy = g.v[i * d + j] * gv2.v[j];
                              m1 += dy;
                              m2 += dy * xh;
                              dgain.v[j] += g.v[i * d + j] * xh;
                              dbias.v[j] += g.v[i * d + j];
                          }
                          m1 /= static_cast<double>(d);
                          m2 /= static_cast<double>(d);
                          for (std::size_t j = 0; j < d; ++j) {
                              const double xh = (row[j] - mean) * inv;
                              const double dy = g.v[i * d + j] * gv2.v[j];
                              dx.v[i * d + j] = (dy - m1 - xh * m2) * inv;
                          }
                      }
                      tp.accumulate(x, dx);
                      tp.accumulate(gain, dgain);
                      tp.accumulate(bias, dbias);
                  },
                  "layer_norm");
}

NodeId gelu(Tape& t, NodeId x) {
    const Tensor& xv = t.value(x);
    Tensor out = xv;
    for (double& v : out.v) v = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
    return t.push(std::move(out), {x},
                  [x](Tape& tp, NodeId id) {
                      const Tensor& g = tp.out_grad(id);
                      const Tensor& xv2 = tp.value(x);
                      Tensor dx = xv2;
                      constexpr double inv_sqrt_2pi = 0.39894228040143267794;
                      for (std::size_t i = 0; i < dx.v.size(); ++i) {
                          const double z = xv2.v[i];
                          const double cdf = 0.5 * (1.0 + std::erf(z * M_SQRT1_2));
                          const double pdf = inv_sqrt_2pi * std::exp(-0.5 * z * z);
                          dx.v[i] = g.v[i] * (cdf + z * pdf);
                      }
                      tp.accumulate(x, dx);
                  },
                  "gelu");
}

NodeId concat_rows(Tape& t, const std::vector<NodeId>& parts) {
    if (parts.empty()) shape_error("concat_rows", "no parts");
    const std::size_t d = t.value(parts[0]).cols();
    std::size_t total = 0;
    for (NodeId p : parts) {
        const Tensor& pv = t.value(p);
        require_2d("concat_rows", pv);
        if (pv.cols() != d) shape_error("concat_rows", "column mismatch");
        total += pv.rows();
    }
    Tensor out({total, d});
    std::size_t r = 0;
    for (NodeId p : parts) {
        const Tensor& pv = t.value(p);
        std::copy(pv.v.begin(), pv.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(r * d));
        r += pv.rows();
    }
    std::vector<NodeId> parents = parts;
    return t.push(std::move(out), parents,
                  [parts, d](Tape& tp, NodeId id) {
                      const Tensor& g = tp.out_grad(id);
                      std::size_t r0 = 0;
                      for (NodeId p : parts) {
                          const std::size_t nr = tp.value(p).rows();
                          Tensor gp({nr, d});
                          std::copy(g.v.begin() + static_cast<std::ptrdiff_t>(r0 * d),
                                    g.v.begin() + static_cast<std::ptrdiff_t>((r0 + nr) * d),
                                    gp.v.begin());
                          tp.accumulate(p, gp);
                          r0 += nr;
                      }
                  },
                  "concat_rows");
}

NodeId slice_rows(Tape& t, NodeId x, std::size_t r0, std::size_t r1) {
    const Tensor& xv = t.value(x);
    require_2d("slice_rows", xv);
    if (r0 >= r1 || r1 > xv.rows()) shape_error("slice_rows", "bad row range");
    const std::size_t d = xv.cols();
    Tensor out({r1 - r0, d});
    std::copy(xv.v.begin() + static_cast<std::ptrdiff_t>(r0 * d),
              xv.v.begin() + static_cast<std::ptrdiff_t>(r1 * d), out.v.begin());
    return t.push(std::move(out), {x},
                  [x, r0, r1, d](Tape& tp, NodeId id) {
                      const Tensor& g = tp.out_grad(id);
                      Tensor gx = Tensor::zeros({tp.value(x).rows(), d});
                      std::copy(g.v.begin(), g.v.end(),
                                gx.v.begin() + static_cast<std::ptrdiff_t>(r0 * d));
                      tp.accumulate(x, gx);
                  },
                  "slice_rows");
}

NodeId concat_cols(Tape& t, const std::vector<NodeId>& parts) {
    if (parts.empty()) shape_error("concat_cols", "no parts");
    const std::size_t n = t.value(parts[0]).rows();
    std::size_t total = 0;
    for (NodeId p : parts) {
        const Tensor& pv = t.value(p);
        require_2d("concat_cols", pv);
        if (pv.rows() != n) shape_error("concat_cols", "row mismatch");
        total += pv.cols();
    }
    Tensor out({n, total});
    std::size_t c = 0;
    for (NodeId p : parts) {
        const Tensor& pv = t.value(p);
        const std::size_t pc = pv.cols();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < pc; ++j) out.v[i * total + c + j] = pv.v[i * pc + j];
        c += pc;
    }
    return t.push(std::move(out), parts,
                  [parts, n, total](Tape& tp, NodeId id) {
                      const Tensor& g = tp.out_grad(id);
                      std::size_t c0 = 0;
                      for (NodeId p : parts) {
                          const std::size_t pc = tp.value(p).cols();
                          Tensor gp({n, pc});
                          for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < pc; ++j)
                                  gp.v[i * pc + j] = g.v[i * total + c0 + j];
                          tp.accumulate(p, gp);
                          c0 += pc;
                      }
                  },
                  "concat_cols");
}

NodeId slice_cols(Tape& t, NodeId x, std::size_t c0, std::size_t c1) {
    const Tensor& xv = t.value(x);
    require_2d("slice_cols", xv);
    if (c0 >= c1 || c1 > xv.cols()) shape_error("slice_cols", "bad column range");
    const std::size_t n = xv.rows(), d = xv.cols(), w = c1 - c0;
    Tensor out({n, w});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) out.v[i * w + j] = xv.v[i * d + c0 + j];
    return t.push(std::move(out), {x},
                  [x, c0, n, d, w](Tape& tp, NodeId id) {
                      const Tensor& g = tp.out_grad(id);
                      Tensor gx = Tensor::zeros({n, d});
                      for (std::size_t i = 0; i < n; ++i)
                          for (std::size_t j = 0; j < w; ++j) gx.v[i * d + c0 + j] = g.v[i * w + j];
                      tp.accumulate(x, gx);
                  },
                  "slice_cols");
}

NodeId gather_rows(Tape& t, NodeId table, std::vector<std::size_t> indices) {
    const Tensor& tv = t.value(table);
    require_2d("gather_rows", tv);
    const std::size_t d = tv.cols();
    for (std::size_t idx : indices) {
        if (idx >= tv.rows()) shape_error("gather_rows", "index out of range");
    }
    Tensor out({indices.size(), d});
    for (std::size_t i = 0; i < indices.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) out.v[i * d + j] = tv.v[indices[i] * d + j];
    return t.push(std::move(out), {table},
                  [table, indices, d](Tape& tp, NodeId id) {
                      const Tensor& g = tp.out_grad(id);
                      Tensor gt = Tensor::zeros(tp.value(table).dims);
                      for (std::size_t i = 0; i < indices.size(); ++i)
                          for (std::size_t j = 0; j < d; ++j)
                              gt.v[indices[i] * d + j] += g.v[i * d + j];
                      tp.accumulate(table, gt);
                  },
                  "gather_rows");
}

NodeId sum_all(Tape& t, NodeId x) {
    const Tensor& xv = t.value(x);
    double s = 0.0;
    for (double v : xv.v) s += v;
    return t.push(Tensor::full({1}, s), {x},
                  [x](Tape& tp, NodeId id) {
                      const double g = tp.out_grad(id).v[0];
                      Tensor gx = Tensor::full(tp.value(x).dims, g);
                      tp.accumulate(x, gx);
                  },
                  "sum_all");
}

NodeId nll_picks(Tape& t, NodeId logp, std::vector<TokenPick> picks) {
    const Tensor& lv = t.value(logp);
    require_2d("nll_picks", lv);
    if (picks.empty()) shape_error("nll_picks", "no picks");
    double s = 0.0;
    for (const TokenPick& p : picks) {
        if (p.row >= lv.rows() || p.token >= lv.cols()) shape_error("nll_picks", "pick out of range");
        s -= lv.at(p.row, p.token);
    }
    return t.push(Tensor::full({1}, s), {logp},
                  [logp, picks](Tape& tp, NodeId id) {
                      const double g = tp.out_grad(id).v[0];
                      Tensor gx = Tensor::zeros(tp.value(logp).dims);
                      const std::size_t d = tp.value(logp).cols();
                      for (const TokenPick& p : picks) gx.v[p.row * d + p.token] -= g;
                      tp.accumulate(logp, gx);
                  },
                  "nll_picks");
}

// ---- composites ------------------------------------------------------------

NodeId affine(Tape& t, NodeId x, NodeId w, NodeId b) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor& bv = t.value(b);
    require_2d("affine", xv);
    require_2d("affine", wv);
    if (xv.cols() != wv.rows())
        shape_error("affine", "inner dims disagree: " + xv.shape_str() + " . " + wv.shape_str());
    if (bv.numel() != wv.cols()) shape_error("affine", "bias size mismatch");
    return add_bias(t, matmul(t, x, w), b);
}

AttentionResult cross_attention(Tape& t, NodeId q, NodeId k, NodeId v, std::size_t heads,
                                bool causal) {
    const Tensor& qv = t.value(q);
    const Tensor& kv = t.value(k);
    const Tensor& vv = t.value(v);
    require_2d("cross_attention", qv);
    const std::size_t d = qv.cols();
    if (heads == 0 || d % heads != 0)
        throw ConfigError("cross_attention: width " + std::to_string(d) +
                          " not divisible by heads " + std::to_string(heads));
    if (kv.cols() != d || vv.cols() != d)
        shape_error("cross_attention", "q/k/v width mismatch");
    if (kv.rows() != vv.rows()) shape_error("cross_attention", "k/v row mismatch");
    if (kv.rows() == 0) shape_error("cross_attention", "empty key/value set");

    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    NodeId mask = -1;
    if (causal) {
        const std::size_t n = qv.rows();
        Tensor m({n, kv.rows()});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < kv.rows(); ++j)
                if (j > i) m.at(i, j) = kMaskNegative;
        mask = t.constant(std::move(m), "causal_mask");
    }

    AttentionResult res;
    std::vector<NodeId> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        NodeId qh = heads == 1 ? q : slice_cols(t, q, h * dh, (h + 1) * dh);
        NodeId kh = heads == 1 ? k : slice_cols(t, k, h * dh, (h + 1) * dh);
        NodeId vh = heads == 1 ? v : slice_cols(t, v, h * dh, (h + 1) * dh);
        NodeId scores = scale(t, matmul_nt(t, qh, kh), inv_sqrt);
        if (mask >= 0) scores = add(t, scores, mask);
        NodeId attn = softmax_rows(t, scores);
        res.head_weights.push_back(attn);
        outs.push_back(matmul(t, attn, vh));
    }
    res.out = heads == 1 ? outs[0] : concat_cols(t, outs);
    return res;
}

NodeId mean_of(Tape& t, const std::vector<NodeId>& parts) {
    if (parts.empty()) shape_error("mean_of", "no parts");
    NodeId acc = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) acc = add(t, acc, parts[i]);
    return scale(t, acc, 1.0 / static_cast<double>(parts.size()));
}

} // namespace koala
