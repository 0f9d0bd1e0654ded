#include "prag/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "prag/error.hpp"
#include "prag/io.hpp"
#include "prag/rng.hpp"

namespace prag {

const char* tie_axis_name(TieAxis a) { return a == TieAxis::item ? "item" : "user"; }

std::optional<TieAxis> parse_tie_axis(const std::string& s) {
    if (s == "item") return TieAxis::item;
    if (s == "user") return TieAxis::user;
    return std::nullopt;
}

void TrainConfig::validate() const {
    if (learning_rate < 0) throw Error::validation("learning_rate must be >= 0");
    if (epochs == 0) throw Error::validation("epochs must be positive");
    if (batch_size == 0) throw Error::validation("batch_size must be positive");
    if (kappa == 0) throw Error::validation("kappa must be positive");
    if (heads == 0) throw Error::validation("heads must be positive");
    if (max_history == 0) throw Error::validation("max_history must be positive");
    if (w_retrieve < 0 || w_rating < 0)
        throw Error::validation("loss weights must be non-negative");
}

void ModelConfig::validate() const {
    if (dim < 2) throw Error::validation("model dim must be >= 2");
    if (heads == 0 || dim % heads != 0)
        throw Error::validation("dim must be divisible by the head count");
    if (kappa == 0) throw Error::validation("kappa must be positive");
    if (r_min > r_max) throw Error::validation("rating range inverted");
}

Param& ParamStore::create(const std::string& name, size_t rows, size_t cols, bool trainable) {
    if (by_name_.count(name)) throw Error::validation("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Param>(name, Mat(rows, cols), trainable));
    by_name_[name] = params_.back().get();
    return *params_.back();
}

Param* ParamStore::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

Param& ParamStore::at(const std::string& name) const {
    Param* p = find(name);
    if (!p) throw Error::runtime("missing parameter tensor: " + name);
    return *p;
}

void ParamStore::zero_grads() {
    for (auto& p : params_) p->grad.zero();
}

namespace {

enum class InitKind { zero, one, embedding, xavier };

void fill_param(Param& p, InitKind kind, Rng& rng) {
    switch (kind) {
        case InitKind::zero:
            break;
        case InitKind::one:
            std::fill(p.value.a.begin(), p.value.a.end(), 1.0);
            break;
        case InitKind::embedding:
            for (double& v : p.value.a) v = rng.normal(0.0, 0.02);
            break;
        case InitKind::xavier: {
            double limit = std::sqrt(6.0 / static_cast<double>(p.value.rows + p.value.cols));
            for (double& v : p.value.a) v = rng.uniform(-limit, limit);
            break;
        }
    }
}

}  // namespace

void RetrieverModel::create_params(const std::vector<std::string>& user_ids,
                                   const std::vector<std::string>& item_ids) {
    const size_t d = cfg_.dim;
    const size_t f = cfg_.ffn_width();
    const size_t dh = cfg_.hidden_width();
    const size_t kp = cfg_.kappa;

    params_.create("c_user_side", 1, d);
    params_.create("c_item_side", 1, d);
    params_.create("cold_user", 1, d);
    params_.create("cold_item", 1, d);

    std::vector<std::string> users = user_ids, items = item_ids;
    std::sort(users.begin(), users.end());
    std::sort(items.begin(), items.end());
    for (const auto& u : users) v_user_[u] = &params_.create("v_user/" + u, 1, d);
    for (const auto& i : items) v_item_[i] = &params_.create("v_item/" + i, 1, d);

    for (int b = 0; b < 2; ++b) {
        std::string p = "block" + std::to_string(b) + "/";
        params_.create(p + "ln1/gain", 1, d);
        params_.create(p + "ln1/bias", 1, d);
        params_.create(p + "attn/wq", d, d);
        params_.create(p + "attn/bq", 1, d);
        params_.create(p + "attn/wk", d, d);  // no key bias: softmax is shift-invariant
        params_.create(p + "attn/wv", d, d);
        params_.create(p + "attn/bv", 1, d);
        params_.create(p + "attn/wo", d, d);
        params_.create(p + "attn/bo", 1, d);
        params_.create(p + "ln2/gain", 1, d);
        params_.create(p + "ln2/bias", 1, d);
        params_.create(p + "ffn/w1", d, f);
        params_.create(p + "ffn/b1", 1, f);
        params_.create(p + "ffn/w2", f, d);
        params_.create(p + "ffn/b2", 1, d);
    }

    params_.create("attn_score/w", 3 * d, 1);
    params_.create("attn_score/b", 1, 1);
    params_.create("query_head/w1", d, dh);
    params_.create("query_head/b1", 1, dh);
    params_.create("query_head/w2", dh, d);
    params_.create("query_head/b2", 1, d);
    params_.create("rating/factor/w", d, kp);
    params_.create("rating/factor/b", 1, kp);
    params_.create("rating/wide/w", d, 1);
    params_.create("rating/wide/b", 1, 1);

    const auto& tie = cfg_.tie_axis == TieAxis::item ? items : users;
    for (const auto& e : tie) gamma_[e] = &params_.create("rating/gamma/" + e, 1, kp);
    for (const auto& u : users) beta_user_[u] = &params_.create("rating/beta_user/" + u, 1, 1);
    for (const auto& i : items) beta_item_[i] = &params_.create("rating/beta_item/" + i, 1, 1);
    params_.create("rating/mu", 1, 1, /*trainable=*/false);
}

RetrieverModel RetrieverModel::init(const ModelConfig& cfg,
                                    const std::vector<std::string>& user_ids,
                                    const std::vector<std::string>& item_ids, uint64_t seed) {
    cfg.validate();
    RetrieverModel m;
    m.cfg_ = cfg;
    m.create_params(user_ids, item_ids);

    Rng rng = Rng::substream(seed, "init");
    for (auto& p : m.params_.all()) {
        const std::string& n = p->name;
        InitKind kind = InitKind::zero;
        if (n.rfind("v_user/", 0) == 0 || n.rfind("v_item/", 0) == 0 ||
            n.rfind("rating/gamma/", 0) == 0 || n == "c_user_side" || n == "c_item_side" ||
            n == "cold_user" || n == "cold_item") {
            kind = InitKind::embedding;
        } else if (n.size() > 5 && n.compare(n.size() - 5, 5, "/gain") == 0) {
            kind = InitKind::one;
        } else if (p->value.rows > 1) {
            kind = InitKind::xavier;  // weight matrices; 1-row tensors are biases
        }
        fill_param(*p, kind, rng);
    }
    m.params_.at("rating/mu").value(0, 0) = cfg.mu;
    return m;
}

void RetrieverModel::wire_lookups() {
    v_user_.clear();
    v_item_.clear();
    gamma_.clear();
    beta_user_.clear();
    beta_item_.clear();
    for (auto& p : params_.all()) {
        const std::string& n = p->name;
        auto strip = [&](const char* prefix) { return n.substr(std::strlen(prefix)); };
        if (n.rfind("v_user/", 0) == 0) v_user_[strip("v_user/")] = p.get();
        else if (n.rfind("v_item/", 0) == 0) v_item_[strip("v_item/")] = p.get();
        else if (n.rfind("rating/gamma/", 0) == 0) gamma_[strip("rating/gamma/")] = p.get();
        else if (n.rfind("rating/beta_user/", 0) == 0) beta_user_[strip("rating/beta_user/")] = p.get();
        else if (n.rfind("rating/beta_item/", 0) == 0) beta_item_[strip("rating/beta_item/")] = p.get();
    }
}

const Param* RetrieverModel::user_embedding(const std::string& id) const {
    auto it = v_user_.find(id);
    return it != v_user_.end() ? it->second : &params_.at("cold_user");
}

const Param* RetrieverModel::item_embedding(const std::string& id) const {
    auto it = v_item_.find(id);
    return it != v_item_.end() ? it->second : &params_.at("cold_item");
}

std::vector<TokenRow> RetrieverModel::make_rows(const std::vector<uint64_t>& user_hist,
                                                const std::vector<uint64_t>& item_hist) {
    std::vector<TokenRow> rows;
    rows.reserve(user_hist.size() + item_hist.size());
    for (uint64_t id : user_hist) rows.push_back({id, 0});
    for (uint64_t id : item_hist) rows.push_back({id, 1});
    if (rows.empty()) throw Error::validation("no evidence for pair");
    std::sort(rows.begin(), rows.end());
    return rows;
}

Mat RetrieverModel::assemble_input(const std::vector<TokenRow>& rows, const std::string& user_id,
                                   const std::string& item_id,
                                   const EmbeddingStore& store) const {
    if (rows.empty()) throw Error::validation("no evidence for pair");
    if (store.dim() != cfg_.dim)
        throw Error::validation("store dim " + std::to_string(store.dim()) +
                                " != model dim " + std::to_string(cfg_.dim));
    const Mat& vu = user_embedding(user_id)->value;
    const Mat& vi = item_embedding(item_id)->value;
    const Mat& cu = params_.at("c_user_side").value;
    const Mat& ci = params_.at("c_item_side").value;

    Mat h0(rows.size(), cfg_.dim);
    for (size_t r = 0; r < rows.size(); ++r) {
        const float* e = store.vector(rows[r].review_id);
        const Mat& side = rows[r].side == 0 ? cu : ci;
        for (size_t c = 0; c < cfg_.dim; ++c)
            h0(r, c) = static_cast<double>(e[c]) + vu(0, c) + vi(0, c) + side(0, c);
    }
    return h0;
}

std::pair<Tape::Id, Tape::Id> RetrieverModel::build_query_graph(
    Tape& tape, const std::vector<TokenRow>& rows, const std::string& user_id,
    const std::string& item_id, const EmbeddingStore& store) const {
    if (rows.empty()) throw Error::validation("no evidence for pair");
    if (store.dim() != cfg_.dim)
        throw Error::validation("store dim " + std::to_string(store.dim()) +
                                " != model dim " + std::to_string(cfg_.dim));
    const size_t n = rows.size();
    const size_t d = cfg_.dim;
    const size_t heads = cfg_.heads;
    const size_t dk = d / heads;

    Mat emb(n, d);
    std::vector<uint8_t> user_mask(n), item_mask(n);
    for (size_t r = 0; r < n; ++r) {
        const float* e = store.vector(rows[r].review_id);
        for (size_t c = 0; c < d; ++c) emb(r, c) = static_cast<double>(e[c]);
        user_mask[r] = rows[r].side == 0;
        item_mask[r] = rows[r].side == 1;
    }

    auto leaf = [&](const std::string& name) { return tape.leaf(params_.at(name)); };
    Tape::Id vu = tape.leaf(*const_cast<Param*>(user_embedding(user_id)));
    Tape::Id vi = tape.leaf(*const_cast<Param*>(item_embedding(item_id)));

    Tape::Id x = tape.constant(std::move(emb));
    x = tape.add_rowvec(x, vu);
    x = tape.add_rowvec(x, vi);
    x = tape.add_rowvec_masked(x, leaf("c_user_side"), user_mask);
    x = tape.add_rowvec_masked(x, leaf("c_item_side"), item_mask);

    for (int b = 0; b < 2; ++b) {
        std::string p = "block" + std::to_string(b) + "/";
        Tape::Id xn = tape.layernorm(x, leaf(p + "ln1/gain"), leaf(p + "ln1/bias"));
        Tape::Id qm = tape.add_rowvec(tape.matmul(xn, leaf(p + "attn/wq")), leaf(p + "attn/bq"));
        Tape::Id km = tape.matmul(xn, leaf(p + "attn/wk"));
        Tape::Id vm = tape.add_rowvec(tape.matmul(xn, leaf(p + "attn/wv")), leaf(p + "attn/bv"));

        std::vector<Tape::Id> head_outs;
        head_outs.reserve(heads);
        for (size_t h = 0; h < heads; ++h) {
            size_t c0 = h * dk, c1 = (h + 1) * dk;
            Tape::Id qh = tape.slice_cols(qm, c0, c1);
            Tape::Id kh = tape.slice_cols(km, c0, c1);
            Tape::Id vh = tape.slice_cols(vm, c0, c1);
            Tape::Id scores = tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(double(dk)));
            Tape::Id attn = tape.row_softmax(scores);
            head_outs.push_back(tape.matmul(attn, vh));
        }
        Tape::Id concat = tape.concat_cols(head_outs);
        Tape::Id attn_out =
            tape.add_rowvec(tape.matmul(concat, leaf(p + "attn/wo")), leaf(p + "attn/bo"));
        x = tape.add(x, attn_out);

        Tape::Id yn = tape.layernorm(x, leaf(p + "ln2/gain"), leaf(p + "ln2/bias"));
        Tape::Id f1 =
            tape.relu(tape.add_rowvec(tape.matmul(yn, leaf(p + "ffn/w1")), leaf(p + "ffn/b1")));
        Tape::Id f2 = tape.add_rowvec(tape.matmul(f1, leaf(p + "ffn/w2")), leaf(p + "ffn/b2"));
        x = tape.add(x, f2);
    }

    // personalized attention pooling over transformer outputs
    Tape::Id cat = tape.concat_cols({x, tape.repeat_rows(vu, n), tape.repeat_rows(vi, n)});
    Tape::Id raw = tape.add_rowvec(tape.matmul(cat, leaf("attn_score/w")), leaf("attn_score/b"));
    Tape::Id weights = tape.normalize_sum(tape.relu(raw));
    Tape::Id pooled = tape.matmul_tn(weights, x);

    Tape::Id hq = tape.relu(
        tape.add_rowvec(tape.matmul(pooled, leaf("query_head/w1")), leaf("query_head/b1")));
    Tape::Id q = tape.add_rowvec(tape.matmul(hq, leaf("query_head/w2")), leaf("query_head/b2"));
    return {q, weights};
}

std::pair<Tape::Id, Tape::Id> RetrieverModel::build_rating_graph(Tape& tape, Tape::Id q,
                                                                 const std::string& user_id,
                                                                 const std::string& item_id) const {
    auto leaf = [&](const std::string& name) { return tape.leaf(params_.at(name)); };
    Tape::Id f = tape.add_rowvec(tape.matmul(q, leaf("rating/factor/w")), leaf("rating/factor/b"));

    const std::string& entity = cfg_.tie_axis == TieAxis::item ? item_id : user_id;
    auto git = gamma_.find(entity);
    Tape::Id gamma = git != gamma_.end() ? tape.leaf(*git->second)
                                         : tape.constant(Mat(1, cfg_.kappa));
    Tape::Id adjustment = tape.dot_all(f, gamma);

    Tape::Id wide = tape.add_rowvec(tape.matmul(q, leaf("rating/wide/w")), leaf("rating/wide/b"));

    auto bu_it = beta_user_.find(user_id);
    Tape::Id bu = bu_it != beta_user_.end() ? tape.leaf(*bu_it->second) : tape.constant(Mat(1, 1));
    auto bi_it = beta_item_.find(item_id);
    Tape::Id bi = bi_it != beta_item_.end() ? tape.leaf(*bi_it->second) : tape.constant(Mat(1, 1));

    Tape::Id rhat = tape.add(tape.add(tape.add(adjustment, wide), bu), bi);
    rhat = tape.add_scalar(rhat, params_.at("rating/mu").value(0, 0));
    return {rhat, adjustment};
}

JointGraph RetrieverModel::build_joint_graph(Tape& tape, const std::vector<TokenRow>& rows,
                                             const std::string& user_id,
                                             const std::string& item_id,
                                             const EmbeddingStore& store,
                                             const std::vector<double>& target_embedding,
                                             double rating, double w_retrieve,
                                             double w_rating) const {
    JointGraph g;
    auto [q, weights] = build_query_graph(tape, rows, user_id, item_id, store);
    (void)weights;
    g.q = q;
    auto [rhat, adj] = build_rating_graph(tape, q, user_id, item_id);
    g.rhat = rhat;
    g.adjustment = adj;

    g.l_retrieve = tape.sq_diff_sum(q, Mat::row(target_embedding));
    Mat target_r(1, 1);
    target_r(0, 0) = rating;
    g.l_rating = tape.sq_diff_sum(rhat, target_r);
    g.total = tape.add(tape.scale(g.l_retrieve, w_retrieve), tape.scale(g.l_rating, w_rating));
    return g;
}

ForwardOutput RetrieverModel::forward(const std::vector<TokenRow>& rows,
                                      const std::string& user_id, const std::string& item_id,
                                      const EmbeddingStore& store) const {
    Tape tape;
    auto [q, weights] = build_query_graph(tape, rows, user_id, item_id, store);
    auto [rhat, adj] = build_rating_graph(tape, q, user_id, item_id);

    ForwardOutput out;
    out.query.values = tape.val(q).a;
    out.query.user_id = user_id;
    out.query.item_id = item_id;
    out.rhat = tape.val(rhat)(0, 0);
    out.adjustment = tape.val(adj)(0, 0);
    out.attention = tape.val(weights).a;
    out.rows = rows;
    return out;
}

std::vector<double> personalized_attention(const Mat& h, const std::vector<double>& v_user,
                                           const std::vector<double>& v_item,
                                           const Mat& scorer_w, double scorer_b) {
    if (h.rows == 0) throw Error::validation("personalized_attention requires tokens");
    if (scorer_w.rows != h.cols + v_user.size() + v_item.size() || scorer_w.cols != 1)
        throw Error::validation("scorer shape mismatch");
    std::vector<double> scores(h.rows, 0.0);
    double total = 0.0;
    for (size_t r = 0; r < h.rows; ++r) {
        double s = scorer_b;
        size_t w = 0;
        for (size_t c = 0; c < h.cols; ++c) s += h(r, c) * scorer_w(w++, 0);
        for (double v : v_user) s += v * scorer_w(w++, 0);
        for (double v : v_item) s += v * scorer_w(w++, 0);
        scores[r] = s > 0.0 ? s : 0.0;
        total += scores[r];
    }
    if (total > 0.0) {
        for (double& s : scores) s /= total;
    } else {
        std::fill(scores.begin(), scores.end(), 1.0 / static_cast<double>(h.rows));
    }
    return scores;
}

RatingBreakdown predict_rating(const RetrieverModel& model, const LatentQuery& q,
                               const std::string& user_id, const std::string& item_id) {
    for (double v : q.values)
        if (!std::isfinite(v)) throw Error::validation("latent query not finite");
    Tape tape;
    Tape::Id qn = tape.constant(Mat::row(q.values));
    auto [rhat, adj] = model.build_rating_graph(tape, qn, user_id, item_id);
    return {tape.val(rhat)(0, 0), tape.val(adj)(0, 0)};
}

JointLoss joint_loss(const std::vector<double>& q, const std::vector<double>& target,
                     double rhat, double rating, double w_retrieve, double w_rating) {
    if (q.size() != target.size())
        throw Error::validation("query/target length mismatch");
    double l_ret = 0.0;
    for (size_t i = 0; i < q.size(); ++i) {
        double d = q[i] - target[i];
        l_ret += d * d;
    }
    double dr = rhat - rating;
    double l_rat = dr * dr;
    return {w_retrieve * l_ret + w_rating * l_rat, l_ret, l_rat};
}

double clamp_rating(double r, const ModelConfig& cfg) {
    return std::min(cfg.r_max, std::max(cfg.r_min, r));
}

namespace {
constexpr char kCheckpointMagic[4] = {'P', 'R', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;
}  // namespace

void RetrieverModel::save(const std::string& path) const {
    ensure_parent_dir(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error::runtime("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u8(out, static_cast<uint8_t>(cfg_.tie_axis));
    put_u32(out, cfg_.dim);
    put_u32(out, cfg_.heads);
    put_u32(out, cfg_.ffn);
    put_u32(out, cfg_.d_h);
    put_u32(out, cfg_.kappa);
    put_u32(out, cfg_.max_history);
    put_f64(out, cfg_.mu);
    put_f64(out, cfg_.r_min);
    put_f64(out, cfg_.r_max);
    put_lp_string(out, cfg_.backend_name);

    // sorted by name for byte-stable files
    std::vector<const Param*> sorted;
    for (const auto& p : params_.all()) sorted.push_back(p.get());
    std::sort(sorted.begin(), sorted.end(),
              [](const Param* a, const Param* b) { return a->name < b->name; });
    put_u64(out, sorted.size());
    for (const Param* p : sorted) {
        put_lp_string(out, p->name);
        put_u8(out, 1);  // dtype f64
        put_u64(out, p->value.rows);
        put_u64(out, p->value.cols);
        out.write(reinterpret_cast<const char*>(p->value.a.data()),
                  static_cast<std::streamsize>(sizeof(double) * p->value.a.size()));
    }
    if (!out) throw Error::runtime("short write: " + path);
}

RetrieverModel RetrieverModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error::missing("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw Error::runtime("not a checkpoint file: " + path);
    uint32_t version = get_u32(in);
    if (version != kCheckpointVersion)
        throw Error::runtime("unsupported checkpoint version " + std::to_string(version));

    RetrieverModel m;
    m.cfg_.tie_axis = static_cast<TieAxis>(get_u8(in));
    m.cfg_.dim = get_u32(in);
    m.cfg_.heads = get_u32(in);
    m.cfg_.ffn = get_u32(in);
    m.cfg_.d_h = get_u32(in);
    m.cfg_.kappa = get_u32(in);
    m.cfg_.max_history = get_u32(in);
    m.cfg_.mu = get_f64(in);
    m.cfg_.r_min = get_f64(in);
    m.cfg_.r_max = get_f64(in);
    m.cfg_.backend_name = get_lp_string(in);
    m.cfg_.validate();

    uint64_t n_tensors = get_u64(in);
    for (uint64_t t = 0; t < n_tensors; ++t) {
        std::string name = get_lp_string(in);
        uint8_t dtype = get_u8(in);
        uint64_t rows = get_u64(in);
        uint64_t cols = get_u64(in);
        if (rows == 0 || cols == 0 || rows * cols > (1ull << 32))
            throw Error::runtime("tensor shape out of bounds (corrupt checkpoint)");
        Param& p = m.params_.create(name, rows, cols, name != "rating/mu");
        if (dtype == 1) {
            in.read(reinterpret_cast<char*>(p.value.a.data()),
                    static_cast<std::streamsize>(sizeof(double) * p.value.a.size()));
        } else if (dtype == 0) {
            std::vector<float> buf(rows * cols);
            in.read(reinterpret_cast<char*>(buf.data()),
                    static_cast<std::streamsize>(sizeof(float) * buf.size()));
            for (size_t i = 0; i < buf.size(); ++i) p.value.a[i] = buf[i];
        } else {
            throw Error::runtime("unknown tensor dtype (corrupt checkpoint)");
        }
        if (!in) throw Error::runtime("unexpected end of file (truncated or corrupt)");
        if (!p.value.finite()) throw Error::runtime("non-finite tensor in checkpoint: " + name);
    }

    // required core tensors
    for (const char* name : {"c_user_side", "c_item_side", "cold_user", "cold_item",
                             "attn_score/w", "attn_score/b", "query_head/w1", "query_head/w2",
                             "rating/factor/w", "rating/wide/w", "rating/mu"})
        m.params_.at(name);
    m.wire_lookups();
    return m;
}

}  // namespace prag
