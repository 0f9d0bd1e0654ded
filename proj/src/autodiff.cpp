#include "prag/autodiff.hpp"

#include <cassert>
#include <cmath>

namespace prag {

Tape::Id Tape::push(Mat val, std::function<void(Tape&)> back, Param* param) {
    Node n;
    n.grad = Mat(val.rows, val.cols);
    n.val = std::move(val);
    n.back = std::move(back);
    n.param = param;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

Tape::Id Tape::constant(Mat v) { return push(std::move(v), {}); }

Tape::Id Tape::leaf(Param& p) { return push(p.value, {}, &p); }

Tape::Id Tape::add(Id a, Id b) {
    assert(nodes_[a].val.same_shape(nodes_[b].val));
    Mat out = nodes_[a].val;
    add_inplace(out, nodes_[b].val);
    Id id = push(std::move(out), {});
    nodes_[id].back = [a, b, id](Tape& t) {
        add_inplace(t.nodes_[a].grad, t.nodes_[id].grad);
        add_inplace(t.nodes_[b].grad, t.nodes_[id].grad);
    };
    return id;
}

Tape::Id Tape::sub(Id a, Id b) {
    assert(nodes_[a].val.same_shape(nodes_[b].val));
    Mat out = nodes_[a].val;
    add_inplace(out, nodes_[b].val, -1.0);
    Id id = push(std::move(out), {});
    nodes_[id].back = [a, b, id](Tape& t) {
        add_inplace(t.nodes_[a].grad, t.nodes_[id].grad);
        add_inplace(t.nodes_[b].grad, t.nodes_[id].grad, -1.0);
    };
    return id;
}

Tape::Id Tape::add_rowvec(Id x, Id v) {
    const Mat& xv = nodes_[x].val;
    const Mat& vv = nodes_[v].val;
    assert(vv.rows == 1 && vv.cols == xv.cols);
    Mat out = xv;
    for (size_t r = 0; r < out.rows; ++r)
        for (size_t c = 0; c < out.cols; ++c) out(r, c) += vv(0, c);
    Id id = push(std::move(out), {});
    nodes_[id].back = [x, v, id](Tape& t) {
        const Mat& g = t.nodes_[id].grad;
        add_inplace(t.nodes_[x].grad, g);
        Mat& gv = t.nodes_[v].grad;
        for (size_t r = 0; r < g.rows; ++r)
            for (size_t c = 0; c < g.cols; ++c) gv(0, c) += g(r, c);
    };
    return id;
}

Tape::Id Tape::add_rowvec_masked(Id x, Id v, std::vector<uint8_t> row_mask) {
    const Mat& xv = nodes_[x].val;
    const Mat& vv = nodes_[v].val;
    assert(vv.rows == 1 && vv.cols == xv.cols && row_mask.size() == xv.rows);
    Mat out = xv;
    for (size_t r = 0; r < out.rows; ++r) {
        if (!row_mask[r]) continue;
        for (size_t c = 0; c < out.cols; ++c) out(r, c) += vv(0, c);
    }
    Id id = push(std::move(out), {});
    nodes_[id].back = [x, v, id, mask = std::move(row_mask)](Tape& t) {
        const Mat& g = t.nodes_[id].grad;
        add_inplace(t.nodes_[x].grad, g);
        Mat& gv = t.nodes_[v].grad;
        for (size_t r = 0; r < g.rows; ++r) {
            if (!mask[r]) continue;
            for (size_t c = 0; c < g.cols; ++c) gv(0, c) += g(r, c);
        }
    };
    return id;
}

Tape::Id Tape::repeat_rows(Id v, size_t n) {
    const Mat& vv = nodes_[v].val;
    assert(vv.rows == 1);
    Mat out(n, vv.cols);
    for (size_t r = 0; r < n; ++r)
        for (size_t c = 0; c < vv.cols; ++c) out(r, c) = vv(0, c);
    Id id = push(std::move(out), {});
    nodes_[id].back = [v, id](Tape& t) {
        const Mat& g = t.nodes_[id].grad;
        Mat& gv = t.nodes_[v].grad;
        for (size_t r = 0; r < g.rows; ++r)
            for (size_t c = 0; c < g.cols; ++c) gv(0, c) += g(r, c);
    };
    return id;
}

Tape::Id Tape::matmul(Id a, Id b) {
    Id id = push(prag::matmul(nodes_[a].val, nodes_[b].val), {});
    nodes_[id].back = [a, b, id](Tape& t) {
        const Mat& g = t.nodes_[id].grad;
        add_inplace(t.nodes_[a].grad, prag::matmul_nt(g, t.nodes_[b].val));
        add_inplace(t.nodes_[b].grad, prag::matmul_tn(t.nodes_[a].val, g));
    };
    return id;
}

Tape::Id Tape::matmul_nt(Id a, Id b) {
    Id id = push(prag::matmul_nt(nodes_[a].val, nodes_[b].val), {});
    nodes_[id].back = [a, b, id](Tape& t) {
        const Mat& g = t.nodes_[id].grad;
        add_inplace(t.nodes_[a].grad, prag::matmul(g, t.nodes_[b].val));
        add_inplace(t.nodes_[b].grad, prag::matmul_tn(g, t.nodes_[a].val));
    };
    return id;
}

Tape::Id Tape::matmul_tn(Id a, Id b) {
    Id id = push(prag::matmul_tn(nodes_[a].val, nodes_[b].val), {});
    nodes_[id].back = [a, b, id](Tape& t) {
        const Mat& g = t.nodes_[id].grad;
        add_inplace(t.nodes_[a].grad, prag::matmul_nt(t.nodes_[b].val, g));
        add_inplace(t.nodes_[b].grad, prag::matmul(t.nodes_[a].val, g));
    };
    return id;
}

Tape::Id Tape::scale(Id a, double s) {
    Mat out = nodes_[a].val;
    for (double& v : out.a) v *= s;
    Id id = push(std::move(out), {});
    nodes_[id].back = [a, s, id](Tape& t) {
        add_inplace(t.nodes_[a].grad, t.nodes_[id].grad, s);
    };
    return id;
}

Tape::Id Tape::add_scalar(Id a, double c) {
    Mat out = nodes_[a].val;
    for (double& v : out.a) v += c;
    Id id = push(std::move(out), {});
    nodes_[id].back = [a, id](Tape& t) {
        add_inplace(t.nodes_[a].grad, t.nodes_[id].grad);
    };
    return id;
}

Tape::Id Tape::relu(Id a) {
    Mat out = nodes_[a].val;
    for (double& v : out.a) v = v > 0.0 ? v : 0.0;
    Id id = push(std::move(out), {});
    nodes_[id].back = [a, id](Tape& t) {
        const Mat& g = t.nodes_[id].grad;
        const Mat& in = t.nodes_[a].val;
        Mat& ga = t.nodes_[a].grad;
        for (size_t i = 0; i < g.a.size(); ++i)
            if (in.a[i] > 0.0) ga.a[i] += g.a[i];
    };
    return id;
}

Tape::Id Tape::row_softmax(Id a) {
    const Mat& in = nodes_[a].val;
    Mat out(in.rows, in.cols);
    for (size_t r = 0; r < in.rows; ++r) {
        double mx = in(r, 0);
        for (size_t c = 1; c < in.cols; ++c) mx = std::max(mx, in(r, c));
        double total = 0.0;
        for (size_t c = 0; c < in.cols; ++c) {
            out(r, c) = std::exp(in(r, c) - mx);
            total += out(r, c);
        }
        for (size_t c = 0; c < in.cols; ++c) out(r, c) /= total;
    }
    Id id = push(std::move(out), {});
    nodes_[id].back = [a, id](Tape& t) {
        const Mat& g = t.nodes_[id].grad;
        const Mat& y = t.nodes_[id].val;
        Mat& ga = t.nodes_[a].grad;
        for (size_t r = 0; r < g.rows; ++r) {
            double dot = 0.0;
            for (size_t c = 0; c < g.cols; ++c) dot += g(r, c) * y(r, c);
            for (size_t c = 0; c < g.cols; ++c)
                ga(r, c) += y(r, c) * (g(r, c) - dot);
        }
    };
    return id;
}

Tape::Id Tape::layernorm(Id x, Id gain, Id bias, double eps) {
    const Mat& in = nodes_[x].val;
    const Mat& gn = nodes_[gain].val;
    const Mat& bs = nodes_[bias].val;
    assert(gn.rows == 1 && gn.cols == in.cols && bs.rows == 1 && bs.cols == in.cols);

    Mat xhat(in.rows, in.cols);
    std::vector<double> inv_std(in.rows);
    for (size_t r = 0; r < in.rows; ++r) {
        double mean = 0.0;
        for (size_t c = 0; c < in.cols; ++c) mean += in(r, c);
        mean /= static_cast<double>(in.cols);
        double var = 0.0;
        for (size_t c = 0; c < in.cols; ++c) {
            double d = in(r, c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(in.cols);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (size_t c = 0; c < in.cols; ++c) xhat(r, c) = (in(r, c) - mean) * inv_std[r];
    }
    Mat out(in.rows, in.cols);
    for (size_t r = 0; r < in.rows; ++r)
        for (size_t c = 0; c < in.cols; ++c) out(r, c) = gn(0, c) * xhat(r, c) + bs(0, c);

    Id id = push(std::move(out), {});
    nodes_[id].back = [x, gain, bias, id, xhat = std::move(xhat),
                       inv_std = std::move(inv_std)](Tape& t) {
        const Mat& g = t.nodes_[id].grad;
        const Mat& gn = t.nodes_[gain].val;
        Mat& gx = t.nodes_[x].grad;
        Mat& ggain = t.nodes_[gain].grad;
        Mat& gbias = t.nodes_[bias].grad;
        const size_t cols = g.cols;
        for (size_t r = 0; r < g.rows; ++r) {
            double mean_h = 0.0, mean_hx = 0.0;
            for (size_t c = 0; c < cols; ++c) {
                double h = g(r, c) * gn(0, c);
                mean_h += h;
                mean_hx += h * xhat(r, c);
                ggain(0, c) += g(r, c) * xhat(r, c);
                gbias(0, c) += g(r, c);
            }
            mean_h /= static_cast<double>(cols);
            mean_hx /= static_cast<double>(cols);
            for (size_t c = 0; c < cols; ++c) {
                double h = g(r, c) * gn(0, c);
                gx(r, c) += (h - mean_h - xhat(r, c) * mean_hx) * inv_std[r];
            }
        }
    };
    return id;
}

Tape::Id Tape::slice_cols(Id a, size_t c0, size_t c1) {
    const Mat& in = nodes_[a].val;
    assert(c0 < c1 && c1 <= in.cols);
    Mat out(in.rows, c1 - c0);
    for (size_t r = 0; r < in.rows; ++r)
        for (size_t c = c0; c < c1; ++c) out(r, c - c0) = in(r, c);
    Id id = push(std::move(out), {});
    nodes_[id].back = [a, c0, id](Tape& t) {
        const Mat& g = t.nodes_[id].grad;
        Mat& ga = t.nodes_[a].grad;
        for (size_t r = 0; r < g.rows; ++r)
            for (size_t c = 0; c < g.cols; ++c) ga(r, c0 + c) += g(r, c);
    };
    return id;
}

Tape::Id Tape::concat_cols(const std::vector<Id>& parts) {
    assert(!parts.empty());
    size_t rows = nodes_[parts[0]].val.rows;
    size_t cols = 0;
    for (Id p : parts) {
        assert(nodes_[p].val.rows == rows);
        cols += nodes_[p].val.cols;
    }
    Mat out(rows, cols);
    size_t off = 0;
    for (Id p : parts) {
        const Mat& v = nodes_[p].val;
        for (size_t r = 0; r < rows; ++r)
            for (size_t c = 0; c < v.cols; ++c) out(r, off + c) = v(r, c);
        off += v.cols;
    }
    Id id = push(std::move(out), {});
    nodes_[id].back = [parts, id](Tape& t) {
        const Mat& g = t.nodes_[id].grad;
        size_t off = 0;
        for (Id p : parts) {
            Mat& gp = t.nodes_[p].grad;
            for (size_t r = 0; r < gp.rows; ++r)
                for (size_t c = 0; c < gp.cols; ++c) gp(r, c) += g(r, off + c);
            off += gp.cols;
        }
    };
    return id;
}

Tape::Id Tape::normalize_sum(Id s) {
    const Mat& in = nodes_[s].val;
    assert(in.cols == 1);
    double total = 0.0;
    for (double v : in.a) total += v;
    Mat out(in.rows, 1);
    if (total > 0.0) {
        for (size_t r = 0; r < in.rows; ++r) out(r, 0) = in(r, 0) / total;
    } else {
        for (size_t r = 0; r < in.rows; ++r) out(r, 0) = 1.0 / static_cast<double>(in.rows);
    }
    Id id = push(std::move(out), {});
    nodes_[id].back = [s, id, total](Tape& t) {
        if (total <= 0.0) return;  // uniform fallback is constant
        const Mat& g = t.nodes_[id].grad;
        const Mat& w = t.nodes_[id].val;
        Mat& gs = t.nodes_[s].grad;
        double dot = 0.0;
        for (size_t r = 0; r < g.rows; ++r) dot += g(r, 0) * w(r, 0);
        for (size_t r = 0; r < g.rows; ++r) gs(r, 0) += (g(r, 0) - dot) / total;
    };
    return id;
}

Tape::Id Tape::sq_diff_sum(Id a, const Mat& target) {
    const Mat& in = nodes_[a].val;
    assert(in.same_shape(target));
    double total = 0.0;
    for (size_t i = 0; i < in.a.size(); ++i) {
        double d = in.a[i] - target.a[i];
        total += d * d;
    }
    Mat out(1, 1);
    out(0, 0) = total;
    Id id = push(std::move(out), {});
    nodes_[id].back = [a, id, target](Tape& t) {
        double g = t.nodes_[id].grad(0, 0);
        const Mat& in = t.nodes_[a].val;
        Mat& ga = t.nodes_[a].grad;
        for (size_t i = 0; i < in.a.size(); ++i)
            ga.a[i] += 2.0 * (in.a[i] - target.a[i]) * g;
    };
    return id;
}

Tape::Id Tape::dot_all(Id a, Id b) {
    const Mat& av = nodes_[a].val;
    const Mat& bv = nodes_[b].val;
    assert(av.same_shape(bv));
    double total = 0.0;
    for (size_t i = 0; i < av.a.size(); ++i) total += av.a[i] * bv.a[i];
    Mat out(1, 1);
    out(0, 0) = total;
    Id id = push(std::move(out), {});
    nodes_[id].back = [a, b, id](Tape& t) {
        double g = t.nodes_[id].grad(0, 0);
        add_inplace(t.nodes_[a].grad, t.nodes_[b].val, g);
        add_inplace(t.nodes_[b].grad, t.nodes_[a].val, g);
    };
    return id;
}

void Tape::backward(Id loss) {
    assert(nodes_[loss].val.rows == 1 && nodes_[loss].val.cols == 1);
    nodes_[loss].grad(0, 0) = 1.0;
    for (size_t i = nodes_.size(); i-- > 0;)
        if (nodes_[i].back) nodes_[i].back(*this);
    for (auto& n : nodes_)
        if (n.param) add_inplace(n.param->grad, n.grad);
}

}  // namespace prag
