#include "tenshom/autodiff.hpp"

#include "tenshom/error.hpp"

#include <array>
#include <cmath>
#include <memory>
#include <string>

namespace tenshom {
namespace ad {

namespace {

void require_same_tape(Var a, Var b, const char* op)
{
    if (!a.valid() || !b.valid() || a.tape != b.tape) {
        throw UsageError(std::string(op) + ": operands must live on the same tape");
    }
}

void require_same_shape(const Mat& a, const Mat& b, const char* op)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw UsageError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
    }
}

}  // namespace

const Mat& Var::value() const
{
    if (!valid()) {
        throw UsageError("ad::Var: use of an unbound variable");
    }
    return tape->value(id);
}

double Var::scalar() const
{
    const Mat& v = value();
    if (v.rows() != 1 || v.cols() != 1) {
        throw UsageError("ad::Var::scalar: node is not 1x1");
    }
    return v(0, 0);
}

Var Tape::constant(Mat value)
{
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Mat value)
{
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Mat value, std::vector<int> parents, Backward backward)
{
    Node n;
    n.value = std::move(value);
    for (int p : parents) {
        if (nodes_[static_cast<std::size_t>(p)].requires_grad) {
            n.requires_grad = true;
            break;
        }
    }
    if (n.requires_grad) {
        n.parents = std::move(parents);
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var root)
{
    if (root.tape != this) {
        throw UsageError("Tape::backward: root belongs to another tape");
    }
    const Mat& rv = value(root.id);
    if (rv.rows() != 1 || rv.cols() != 1) {
        throw UsageError("Tape::backward: root must be 1x1");
    }
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad.resize(0, 0);
    }
    visited_ = 0;
    auto& r = nodes_[static_cast<std::size_t>(root.id)];
    if (!r.requires_grad) {
        return;
    }
    r.grad = Mat::Ones(1, 1);
    r.has_grad = true;
    for (int i = root.id; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.has_grad || !n.backward) {
            continue;
        }
        ++visited_;
        n.backward(*this, n.grad);
    }
}

Mat Tape::grad(Var v) const
{
    const auto& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.has_grad) {
        return Mat::Zero(n.value.rows(), n.value.cols());
    }
    return n.grad;
}

Var add(Var a, Var b)
{
    require_same_tape(a, b, "add");
    require_same_shape(a.value(), b.value(), "add");
    const int ia = a.id;
    const int ib = b.id;
    return a.tape->record(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& t, const Mat& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var sub(Var a, Var b)
{
    require_same_tape(a, b, "sub");
    require_same_shape(a.value(), b.value(), "sub");
    const int ia = a.id;
    const int ib = b.id;
    return a.tape->record(a.value() - b.value(), {ia, ib}, [ia, ib](Tape& t, const Mat& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, -g);
    });
}

Var mul(Var a, Var b)
{
    require_same_tape(a, b, "mul");
    require_same_shape(a.value(), b.value(), "mul");
    const int ia = a.id;
    const int ib = b.id;
    return a.tape->record(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Tape& t, const Mat& g) {
        if (t.requires_grad(ia)) {
            t.accumulate(ia, g.cwiseProduct(t.value(ib)));
        }
        if (t.requires_grad(ib)) {
            t.accumulate(ib, g.cwiseProduct(t.value(ia)));
        }
    });
}

Var scale(Var a, double s)
{
    const int ia = a.id;
    return a.tape->record(a.value() * s, {ia}, [ia, s](Tape& t, const Mat& g) { t.accumulate(ia, g * s); });
}

Var sin(Var a)
{
    const int ia = a.id;
    Mat v = a.value().array().sin().matrix();
    return a.tape->record(std::move(v), {ia}, [ia](Tape& t, const Mat& g) {
        t.accumulate(ia, g.cwiseProduct(t.value(ia).array().cos().matrix()));
    });
}

Var cos(Var a)
{
    const int ia = a.id;
    Mat v = a.value().array().cos().matrix();
    return a.tape->record(std::move(v), {ia}, [ia](Tape& t, const Mat& g) {
        t.accumulate(ia, -g.cwiseProduct(t.value(ia).array().sin().matrix()));
    });
}

Var square(Var a)
{
    const int ia = a.id;
    return a.tape->record(a.value().array().square().matrix(), {ia}, [ia](Tape& t, const Mat& g) {
        t.accumulate(ia, 2.0 * g.cwiseProduct(t.value(ia)));
    });
}

Var sqrt(Var a)
{
    const int ia = a.id;
    Mat v = a.value().array().sqrt().matrix();
    const int out = static_cast<int>(a.tape->size());
    return a.tape->record(std::move(v), {ia}, [ia, out](Tape& t, const Mat& g) {
        t.accumulate(ia, (0.5 * g.array() / t.value(out).array()).matrix());
    });
}

Var reciprocal(Var a)
{
    const int ia = a.id;
    Mat v = a.value().array().inverse().matrix();
    const int out = static_cast<int>(a.tape->size());
    return a.tape->record(std::move(v), {ia}, [ia, out](Tape& t, const Mat& g) {
        t.accumulate(ia, (-g.array() * t.value(out).array().square()).matrix());
    });
}

Var sum(Var a)
{
    const int ia = a.id;
    Mat v(1, 1);
    v(0, 0) = a.value().sum();
    const auto r = a.rows();
    const auto c = a.cols();
    return a.tape->record(std::move(v), {ia}, [ia, r, c](Tape& t, const Mat& g) {
        t.accumulate(ia, Mat::Constant(r, c, g(0, 0)));
    });
}

Var matmul(Var w, Var x)
{
    require_same_tape(w, x, "matmul");
    if (w.cols() != x.rows()) {
        throw UsageError("matmul: inner dimensions differ");
    }
    const int iw = w.id;
    const int ix = x.id;
    return w.tape->record(w.value() * x.value(), {iw, ix}, [iw, ix](Tape& t, const Mat& g) {
        if (t.requires_grad(iw)) {
            t.accumulate(iw, g * t.value(ix).transpose());
        }
        if (t.requires_grad(ix)) {
            t.accumulate(ix, t.value(iw).transpose() * g);
        }
    });
}

Var add_colvec(Var x, Var b)
{
    require_same_tape(x, b, "add_colvec");
    if (b.cols() != 1 || b.rows() != x.rows()) {
        throw UsageError("add_colvec: bias must be a column matching the row count");
    }
    const int ix = x.id;
    const int ib = b.id;
    Mat v = x.value();
    v.colwise() += b.value().col(0);
    return x.tape->record(std::move(v), {ix, ib}, [ix, ib](Tape& t, const Mat& g) {
        t.accumulate(ix, g);
        if (t.requires_grad(ib)) {
            t.accumulate(ib, g.rowwise().sum());
        }
    });
}

Var row_scale(Var x, Var s)
{
    require_same_tape(x, s, "row_scale");
    if (s.cols() != 1 || s.rows() != x.rows()) {
        throw UsageError("row_scale: scale must be a column matching the row count");
    }
    const int ix = x.id;
    const int is = s.id;
    Mat v = s.value().col(0).asDiagonal() * x.value();
    return x.tape->record(std::move(v), {ix, is}, [ix, is](Tape& t, const Mat& g) {
        if (t.requires_grad(ix)) {
            t.accumulate(ix, t.value(is).col(0).asDiagonal() * g);
        }
        if (t.requires_grad(is)) {
            t.accumulate(is, g.cwiseProduct(t.value(ix)).rowwise().sum());
        }
    });
}

Var col_scale(Var x, const RowVec& v)
{
    if (v.size() != x.cols()) {
        throw UsageError("col_scale: length mismatch");
    }
    const int ix = x.id;
    Mat out = x.value() * v.asDiagonal();
    return x.tape->record(std::move(out), {ix}, [ix, v](Tape& t, const Mat& g) {
        t.accumulate(ix, g * v.asDiagonal());
    });
}

Var weighted_row_sums(Var x, const Vec& w)
{
    if (w.size() != x.cols()) {
        throw UsageError("weighted_row_sums: weight length mismatch");
    }
    const int ix = x.id;
    Mat out = x.value() * w;
    return x.tape->record(std::move(out), {ix}, [ix, w](Tape& t, const Mat& g) {
        t.accumulate(ix, g.col(0) * w.transpose());
    });
}

Var row_products(Var a, Var b)
{
    require_same_tape(a, b, "row_products");
    if (a.cols() != b.cols()) {
        throw UsageError("row_products: column count mismatch");
    }
    const Mat out = ::tenshom::row_products(a.value(), b.value());
    const int ia = a.id;
    const int ib = b.id;
    const auto ra = a.rows();
    const auto rb = b.rows();
    return a.tape->record(out, {ia, ib}, [ia, ib, ra, rb](Tape& t, const Mat& g) {
        const Mat& av = t.value(ia);
        const Mat& bv = t.value(ib);
        if (t.requires_grad(ia)) {
            Mat ga = Mat::Zero(ra, av.cols());
            for (Eigen::Index i = 0; i < ra; ++i) {
                for (Eigen::Index j = 0; j < rb; ++j) {
                    ga.row(i) += g.row(i * rb + j).cwiseProduct(bv.row(j));
                }
            }
            t.accumulate(ia, ga);
        }
        if (t.requires_grad(ib)) {
            Mat gb = Mat::Zero(rb, bv.cols());
            for (Eigen::Index i = 0; i < ra; ++i) {
                for (Eigen::Index j = 0; j < rb; ++j) {
                    gb.row(j) += g.row(i * rb + j).cwiseProduct(av.row(i));
                }
            }
            t.accumulate(ib, gb);
        }
    });
}

Var repeat_rows(Var a, Eigen::Index k)
{
    const int ia = a.id;
    const auto r = a.rows();
    return a.tape->record(::tenshom::repeat_rows(a.value(), k), {ia}, [ia, r, k](Tape& t, const Mat& g) {
        Mat ga = Mat::Zero(r, g.cols());
        for (Eigen::Index i = 0; i < r; ++i) {
            for (Eigen::Index j = 0; j < k; ++j) {
                ga.row(i) += g.row(i * k + j);
            }
        }
        t.accumulate(ia, ga);
    });
}

Var tile_rows(Var a, Eigen::Index k)
{
    const int ia = a.id;
    const auto r = a.rows();
    return a.tape->record(::tenshom::tile_rows(a.value(), k), {ia}, [ia, r, k](Tape& t, const Mat& g) {
        Mat ga = Mat::Zero(r, g.cols());
        for (Eigen::Index j = 0; j < k; ++j) {
            ga += g.middleRows(j * r, r);
        }
        t.accumulate(ia, ga);
    });
}

Var concat_rows(std::span<const Var> parts)
{
    if (parts.empty()) {
        throw UsageError("concat_rows: no operands");
    }
    Tape* tape = parts.front().tape;
    std::vector<int> ids;
    std::vector<Eigen::Index> offsets;
    Eigen::Index rows = 0;
    const auto cols = parts.front().cols();
    for (const auto& p : parts) {
        if (p.tape != tape || p.cols() != cols) {
            throw UsageError("concat_rows: operands differ in tape or column count");
        }
        ids.push_back(p.id);
        offsets.push_back(rows);
        rows += p.rows();
    }
    Mat out(rows, cols);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        out.middleRows(offsets[i], parts[i].rows()) = parts[i].value();
    }
    std::vector<int> parent_ids = ids;
    return tape->record(std::move(out), std::move(parent_ids), [ids, offsets](Tape& t, const Mat& g) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (t.requires_grad(ids[i])) {
                t.accumulate(ids[i], g.middleRows(offsets[i], t.value(ids[i]).rows()));
            }
        }
    });
}

Var select_rows(Var a, std::span<const Eigen::Index> idx)
{
    const int ia = a.id;
    std::vector<Eigen::Index> sel(idx.begin(), idx.end());
    const auto r = a.rows();
    return a.tape->record(::tenshom::select_rows(a.value(), idx), {ia}, [ia, sel, r](Tape& t, const Mat& g) {
        Mat ga = Mat::Zero(r, g.cols());
        for (std::size_t i = 0; i < sel.size(); ++i) {
            ga.row(sel[i]) += g.row(static_cast<Eigen::Index>(i));
        }
        t.accumulate(ia, ga);
    });
}

Var l2_contract(Var cf, std::span<const Var> ff, Var cg, std::span<const Var> fg, std::span<const Vec> weights)
{
    const std::size_t nd = ff.size();
    if (fg.size() != nd || weights.size() != nd) {
        throw UsageError("l2_contract: dimension count mismatch");
    }
    const auto rf = cf.rows();
    const auto rg = cg.rows();
    bool same = cf.id == cg.id;
    for (std::size_t i = 0; i < nd; ++i) {
        if (ff[i].rows() != rf || fg[i].rows() != rg) {
            throw UsageError("l2_contract: factor rank does not match coefficient count");
        }
        if (ff[i].cols() != weights[i].size() || fg[i].cols() != weights[i].size()) {
            throw UsageError("l2_contract: factor node count does not match quadrature rule");
        }
        same = same && ff[i].id == fg[i].id;
    }

    auto grams = std::make_shared<std::vector<Mat>>();
    grams->reserve(nd);
    for (std::size_t i = 0; i < nd; ++i) {
        grams->push_back(ff[i].value() * weights[i].asDiagonal() * fg[i].value().transpose());
    }
    Mat prod = Mat::Ones(rf, rg);
    for (const auto& g : *grams) {
        prod.array() *= g.array();
    }
    Mat out(1, 1);
    out(0, 0) = (cf.value().transpose() * prod * cg.value())(0, 0);

    std::vector<int> parents{cf.id, cg.id};
    std::vector<int> fid;
    std::vector<int> gid;
    for (std::size_t i = 0; i < nd; ++i) {
        fid.push_back(ff[i].id);
        gid.push_back(fg[i].id);
        parents.push_back(ff[i].id);
        parents.push_back(fg[i].id);
    }
    std::vector<Vec> w(weights.begin(), weights.end());
    const int icf = cf.id;
    const int icg = cg.id;

    return cf.tape->record(std::move(out), std::move(parents),
                           [icf, icg, fid, gid, w, grams, same, rf, rg](Tape& t, const Mat& gout) {
        const double s = gout(0, 0);
        const std::size_t n = fid.size();
        const Mat& cfv = t.value(icf);
        const Mat& cgv = t.value(icg);

        // prefix[i] = prod_{k<i} G_k, suffix[i] = prod_{k>i} G_k
        std::vector<Mat> prefix(n + 1, Mat::Ones(rf, rg));
        for (std::size_t i = 0; i < n; ++i) {
            prefix[i + 1] = prefix[i].cwiseProduct((*grams)[i]);
        }
        const Mat& full = prefix[n];
        if (same) {
            t.accumulate(icf, 2.0 * s * full * cfv);
        } else {
            if (t.requires_grad(icf)) {
                t.accumulate(icf, s * full * cgv);
            }
            if (t.requires_grad(icg)) {
                t.accumulate(icg, s * full.transpose() * cfv);
            }
        }
        const Mat outer = s * cfv * cgv.transpose();
        Mat suffix = Mat::Ones(rf, rg);
        for (std::size_t ii = n; ii-- > 0;) {
            const bool need_f = t.requires_grad(fid[ii]);
            const bool need_g = !same && t.requires_grad(gid[ii]);
            if (need_f || need_g) {
                const Mat q = outer.cwiseProduct(prefix[ii]).cwiseProduct(suffix);
                if (same) {
                    t.accumulate(fid[ii], 2.0 * q * (t.value(fid[ii]) * w[ii].asDiagonal()));
                } else {
                    if (need_f) {
                        t.accumulate(fid[ii], q * (t.value(gid[ii]) * w[ii].asDiagonal()));
                    }
                    if (need_g) {
                        t.accumulate(gid[ii], q.transpose() * (t.value(fid[ii]) * w[ii].asDiagonal()));
                    }
                }
            }
            suffix = suffix.cwiseProduct((*grams)[ii]);
        }
    });
}

Var dense_weighted_sq(const Mat& c0, std::span<const DenseTerm> terms, const Vec& w1, const Vec& w2)
{
    const auto n1 = w1.size();
    const auto n2 = w2.size();
    if (c0.size() != 0 && (c0.rows() != n1 || c0.cols() != n2)) {
        throw UsageError("dense_weighted_sq: constant table has the wrong shape");
    }
    if (terms.empty()) {
        throw UsageError("dense_weighted_sq: no terms");
    }
    Tape* tape = terms.front().c.tape;
    Mat res = c0.size() == 0 ? Mat::Zero(n1, n2) : c0;
    std::vector<int> parents;
    for (const auto& t : terms) {
        const auto r = t.c.rows();
        if (t.a.rows() != r || t.b.rows() != r || t.a.cols() != n1 || t.b.cols() != n2 || t.c.cols() != 1) {
            throw UsageError("dense_weighted_sq: term tables have inconsistent shapes");
        }
        if (t.coef.size() != 0 && (t.coef.rows() != n1 || t.coef.cols() != n2)) {
            throw UsageError("dense_weighted_sq: coefficient table has the wrong shape");
        }
        const Mat m = t.a.value().transpose() * t.c.value().asDiagonal() * t.b.value();
        if (t.coef.size() == 0) {
            res += m;
        } else {
            res.array() += t.coef.array() * m.array();
        }
        parents.insert(parents.end(), {t.a.id, t.c.id, t.b.id});
    }
    const Mat wmat = w1 * w2.transpose();
    Mat out(1, 1);
    out(0, 0) = (wmat.array() * res.array().square()).sum();

    struct Saved {
        Mat e;  // 2 W .* res
        std::vector<Mat> coef;
        std::vector<std::array<int, 3>> ids;
    };
    auto saved = std::make_shared<Saved>();
    saved->e = 2.0 * wmat.cwiseProduct(res);
    for (const auto& t : terms) {
        saved->coef.push_back(t.coef);
        saved->ids.push_back({t.a.id, t.c.id, t.b.id});
    }
    return tape->record(std::move(out), std::move(parents), [saved](Tape& tp, const Mat& gout) {
        const double s = gout(0, 0);
        for (std::size_t q = 0; q < saved->ids.size(); ++q) {
            const auto [ia, ic, ib] = saved->ids[q];
            if (!tp.requires_grad(ia) && !tp.requires_grad(ic) && !tp.requires_grad(ib)) {
                continue;
            }
            const Mat g = saved->coef[q].size() == 0 ? Mat(s * saved->e) : Mat(s * saved->coef[q].cwiseProduct(saved->e));
            const Mat& a = tp.value(ia);
            const Mat& c = tp.value(ic);
            const Mat& b = tp.value(ib);
            const Mat ag = a * g;  // R x N2
            if (tp.requires_grad(ia)) {
                tp.accumulate(ia, c.asDiagonal() * (b * g.transpose()));
            }
            if (tp.requires_grad(ib)) {
                tp.accumulate(ib, c.asDiagonal() * ag);
            }
            if (tp.requires_grad(ic)) {
                tp.accumulate(ic, ag.cwiseProduct(b).rowwise().sum());
            }
        }
    });
}

}  // namespace ad

Mat add(const Mat& a, const Mat& b)
{
    return a + b;
}

Mat sub(const Mat& a, const Mat& b)
{
    return a - b;
}

Mat mul(const Mat& a, const Mat& b)
{
    return a.cwiseProduct(b);
}

Mat scale(const Mat& a, double s)
{
    return a * s;
}

Mat matmul(const Mat& w, const Mat& x)
{
    return w * x;
}

Mat row_scale(const Mat& x, const Mat& s)
{
    if (s.cols() != 1 || s.rows() != x.rows()) {
        throw UsageError("row_scale: scale must be a column matching the row count");
    }
    return s.col(0).asDiagonal() * x;
}

Mat col_scale(const Mat& x, const RowVec& v)
{
    if (v.size() != x.cols()) {
        throw UsageError("col_scale: length mismatch");
    }
    return x * v.asDiagonal();
}

Mat weighted_row_sums(const Mat& x, const Vec& w)
{
    if (w.size() != x.cols()) {
        throw UsageError("weighted_row_sums: weight length mismatch");
    }
    return x * w;
}

Mat row_products(const Mat& a, const Mat& b)
{
    if (a.cols() != b.cols()) {
        throw UsageError("row_products: column count mismatch");
    }
    const auto rb = b.rows();
    Mat out(a.rows() * rb, a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < rb; ++j) {
            out.row(i * rb + j) = a.row(i).cwiseProduct(b.row(j));
        }
    }
    return out;
}

Mat repeat_rows(const Mat& a, Eigen::Index k)
{
    Mat out(a.rows() * k, a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < k; ++j) {
            out.row(i * k + j) = a.row(i);
        }
    }
    return out;
}

Mat tile_rows(const Mat& a, Eigen::Index k)
{
    Mat out(a.rows() * k, a.cols());
    for (Eigen::Index j = 0; j < k; ++j) {
        out.middleRows(j * a.rows(), a.rows()) = a;
    }
    return out;
}

Mat concat_rows(std::span<const Mat> parts)
{
    if (parts.empty()) {
        throw UsageError("concat_rows: no operands");
    }
    Eigen::Index rows = 0;
    const auto cols = parts.front().cols();
    for (const auto& p : parts) {
        if (p.cols() != cols) {
            throw UsageError("concat_rows: column count mismatch");
        }
        rows += p.rows();
    }
    Mat out(rows, cols);
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        out.middleRows(off, p.rows()) = p;
        off += p.rows();
    }
    return out;
}

Mat select_rows(const Mat& a, std::span<const Eigen::Index> idx)
{
    Mat out(static_cast<Eigen::Index>(idx.size()), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= a.rows()) {
            throw UsageError("select_rows: index out of range");
        }
        out.row(static_cast<Eigen::Index>(i)) = a.row(idx[i]);
    }
    return out;
}

double l2_contract_value(const Mat& cf, std::span<const Mat> ff, const Mat& cg, std::span<const Mat> fg,
                         std::span<const Vec> weights)
{
    if (ff.size() != fg.size() || ff.size() != weights.size()) {
        throw UsageError("l2_contract: dimension count mismatch");
    }
    Mat prod = Mat::Ones(cf.rows(), cg.rows());
    for (std::size_t i = 0; i < ff.size(); ++i) {
        if (ff[i].rows() != cf.rows() || fg[i].rows() != cg.rows()) {
            throw UsageError("l2_contract: factor rank does not match coefficient count");
        }
        if (ff[i].cols() != weights[i].size() || fg[i].cols() != weights[i].size()) {
            throw UsageError("l2_contract: factor node count does not match quadrature rule");
        }
        prod.array() *= (ff[i] * weights[i].asDiagonal() * fg[i].transpose()).array();
    }
    return (cf.transpose() * prod * cg)(0, 0);
}

Mat dense_residual_table(const Mat& c0, std::span<const DenseTermValue> terms)
{
    Mat res = c0;
    for (const auto& t : terms) {
        const Mat m = t.a.transpose() * t.c.col(0).asDiagonal() * t.b;
        if (res.size() == 0) {
            res = Mat::Zero(m.rows(), m.cols());
        }
        if (t.coef.size() == 0) {
            res += m;
        } else {
            res.array() += t.coef.array() * m.array();
        }
    }
    return res;
}

ad::Var make_like(const ad::Var& like, Mat m)
{
    return like.tape->constant(std::move(m));
}

}  // namespace tenshom
