#include "reclm/policy_lm.hpp"

#include <numeric>

#include "reclm/checkpoint.hpp"

namespace reclm {

namespace {

Eigen::RowVectorXd log_softmax(const Eigen::RowVectorXd& logits) {
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    return logits.array() - lse;
}

}  // namespace

PolicyModel::PolicyModel(Vocabulary vocab, const PolicyConfig& cfg) : vocab_(std::move(vocab)), cfg_(cfg) {
    if (cfg.embed_dim < 1 || cfg.hidden_dim < 1 || cfg.context_len < 2)
        throw ConfigError("invalid policy config");
    Rng rng(cfg.seed);
    const int v = vocab_.size();
    Mat e(v, cfg.embed_dim), wi(cfg.embed_dim, cfg.hidden_dim), wr(cfg.hidden_dim, cfg.hidden_dim),
        wo(cfg.hidden_dim, v);
    xavier_init(e, rng);
    xavier_init(wi, rng);
    xavier_init(wr, rng);
    wr *= 0.5;  // keep the recurrence contractive at init
    xavier_init(wo, rng);
    embed_ = Param(std::move(e));
    w_in_ = Param(std::move(wi));
    w_rec_ = Param(std::move(wr));
    b_hid_ = Param(Mat::Zero(1, cfg.hidden_dim));
    w_out_ = Param(std::move(wo));
    b_out_ = Param(Mat::Zero(1, v));
}

std::string PolicyModel::descriptor() const {
    return "elman-rnn-v1(de=" + std::to_string(cfg_.embed_dim) + ",dh=" +
           std::to_string(cfg_.hidden_dim) + ",V=" + std::to_string(vocab_.size()) + ")";
}

std::size_t PolicyModel::parameter_count() const {
    std::size_t n = 0;
    for (auto* p : params()) n += std::size_t(p->w.size());
    return n;
}

Mat PolicyModel::hidden_states(const std::vector<int>& inputs) const {
    Mat h(inputs.size(), cfg_.hidden_dim);
    Eigen::RowVectorXd prev = Eigen::RowVectorXd::Zero(cfg_.hidden_dim);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        Eigen::RowVectorXd z = embed_.w.row(inputs[t]) * w_in_.w + prev * w_rec_.w + b_hid_.w.row(0);
        h.row(Eigen::Index(t)) = z.array().tanh();
        prev = h.row(Eigen::Index(t));
    }
    return h;
}

Mat PolicyModel::forward_logprob_rows(const std::vector<int>& tokens) const {
    if (int(tokens.size()) > cfg_.context_len)
        throw ConfigError("sequence exceeds context length " + std::to_string(cfg_.context_len));
    std::vector<int> inputs{Vocabulary::kBos};
    inputs.insert(inputs.end(), tokens.begin(), tokens.end() - (tokens.empty() ? 0 : 1));
    Mat h = hidden_states(inputs);
    Mat out(tokens.size(), vocab_.size());
    for (std::size_t t = 0; t < tokens.size(); ++t)
        out.row(Eigen::Index(t)) =
            log_softmax(h.row(Eigen::Index(t)) * w_out_.w + b_out_.w.row(0));
    return out;
}

Vec PolicyModel::forward_logprobs(const std::vector<int>& tokens) const {
    Mat rows = forward_logprob_rows(tokens);
    Vec out(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) out[Eigen::Index(t)] = rows(Eigen::Index(t), tokens[t]);
    return out;
}

double PolicyModel::masked_loss(const std::vector<MaskedSequence>& batch) const {
    double total = 0;
    long count = 0;
    for (const auto& seq : batch) {
        if (seq.tokens.size() != seq.mask.size()) throw ConfigError("mask length mismatch");
        Vec lp = forward_logprobs(seq.tokens);
        for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
            if (seq.mask[t]) {
                total -= lp[Eigen::Index(t)];
                ++count;
            }
        }
    }
    if (count == 0) throw ConfigError("corpus has no masked (response) positions");
    return total / double(count);
}

Mat PolicyModel::run_hidden(const std::vector<int>& inputs) const { return hidden_states(inputs); }

void PolicyModel::backprop_hidden(const std::vector<int>& inputs, const Mat& hidden,
                                  const Mat& g_hidden) {
    const std::size_t T = inputs.size();
    if (hidden.rows() != Eigen::Index(T) || g_hidden.rows() != Eigen::Index(T))
        throw DimensionError("backprop_hidden: shape mismatch");
    Eigen::RowVectorXd g_h_next = Eigen::RowVectorXd::Zero(cfg_.hidden_dim);
    for (std::size_t t = T; t-- > 0;) {
        Eigen::RowVectorXd g_h = g_hidden.row(Eigen::Index(t)) + g_h_next;
        Eigen::RowVectorXd g_z = g_h.array() * (1.0 - hidden.row(Eigen::Index(t)).array().square());
        Eigen::RowVectorXd prev = (t == 0) ? Eigen::RowVectorXd::Zero(cfg_.hidden_dim)
                                           : Eigen::RowVectorXd(hidden.row(Eigen::Index(t - 1)));
        w_in_.g += embed_.w.row(inputs[t]).transpose() * g_z;
        w_rec_.g += prev.transpose() * g_z;
        b_hid_.g.row(0) += g_z;
        embed_.g.row(inputs[t]) += g_z * w_in_.w.transpose();
        g_h_next = g_z * w_rec_.w.transpose();
    }
}

void PolicyModel::add_weighted_logprob_grad(const std::vector<int>& tokens, const Vec& weights) {
    if (Eigen::Index(tokens.size()) != weights.size()) throw ConfigError("weight length mismatch");
    std::vector<int> inputs{Vocabulary::kBos};
    inputs.insert(inputs.end(), tokens.begin(), tokens.end() - (tokens.empty() ? 0 : 1));
    const std::size_t T = tokens.size();
    Mat h = hidden_states(inputs);

    // d(loss)/d(logits): weights[t] * (softmax - onehot)
    Mat g_hidden = Mat::Zero(Eigen::Index(T), cfg_.hidden_dim);
    for (std::size_t t = 0; t < T; ++t) {
        Eigen::RowVectorXd lp = log_softmax(h.row(Eigen::Index(t)) * w_out_.w + b_out_.w.row(0));
        Eigen::RowVectorXd g_logits = weights[Eigen::Index(t)] * lp.array().exp().matrix();
        g_logits[tokens[t]] -= weights[Eigen::Index(t)];
        w_out_.g += h.row(Eigen::Index(t)).transpose() * g_logits;
        b_out_.g.row(0) += g_logits;
        g_hidden.row(Eigen::Index(t)) = g_logits * w_out_.w.transpose();
    }
    backprop_hidden(inputs, h, g_hidden);
}

std::vector<double> PolicyModel::train_masked(const std::vector<MaskedSequence>& corpus,
                                              const MaskedTrainConfig& cfg) {
    if (corpus.empty()) throw ConfigError("empty masked corpus");
    long total_masked = 0;
    for (const auto& seq : corpus)
        total_masked += std::accumulate(seq.mask.begin(), seq.mask.end(), 0L);
    if (total_masked == 0) throw ConfigError("corpus has no masked (response) positions");

    auto ps = params();
    Adam opt(cfg.learning_rate);
    Rng rng(cfg.seed);
    std::vector<double> trace;
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
        double ep_loss = 0;
        int ep_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            zero_grad();
            const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
            long masked_in_batch = 0;
            for (std::size_t i = start; i < end; ++i)
                masked_in_batch +=
                    std::accumulate(corpus[order[i]].mask.begin(), corpus[order[i]].mask.end(), 0L);
            if (masked_in_batch == 0) continue;
            double batch_loss = 0;
            for (std::size_t i = start; i < end; ++i) {
                const auto& seq = corpus[order[i]];
                Vec w(seq.tokens.size());
                for (std::size_t t = 0; t < seq.tokens.size(); ++t)
                    w[Eigen::Index(t)] = seq.mask[t] ? 1.0 / double(masked_in_batch) : 0.0;
                add_weighted_logprob_grad(seq.tokens, w);
                Vec lp = forward_logprobs(seq.tokens);
                for (std::size_t t = 0; t < seq.tokens.size(); ++t)
                    if (seq.mask[t]) batch_loss -= lp[Eigen::Index(t)] / double(masked_in_batch);
            }
            if (!std::isfinite(batch_loss)) throw ConfigError("masked training diverged");
            opt.step(ps);
            ep_loss += batch_loss;
            ++ep_batches;
        }
        trace.push_back(ep_batches ? ep_loss / double(ep_batches) : 0.0);
    }
    return trace;
}

PolicyModel::Generation PolicyModel::generate_ids(const std::vector<int>& prompt_ids, int max_tokens,
                                                  double temperature, std::uint64_t seed,
                                                  bool greedy) const {
    if (int(prompt_ids.size()) + max_tokens > cfg_.context_len)
        throw ConfigError("prompt plus generation exceeds context length");
    Generation gen;
    if (max_tokens == 0) {
        gen.logprobs = Vec(0);
        return gen;
    }
    Rng rng(seed);
    std::vector<int> inputs{Vocabulary::kBos};
    inputs.insert(inputs.end(), prompt_ids.begin(), prompt_ids.end());

    Eigen::RowVectorXd hprev = Eigen::RowVectorXd::Zero(cfg_.hidden_dim);
    for (int tok : inputs) {
        Eigen::RowVectorXd z = embed_.w.row(tok) * w_in_.w + hprev * w_rec_.w + b_hid_.w.row(0);
        hprev = z.array().tanh();
    }
    std::vector<double> lps;
    for (int step = 0; step < max_tokens; ++step) {
        Eigen::RowVectorXd logits = hprev * w_out_.w + b_out_.w.row(0);
        Eigen::RowVectorXd lp = log_softmax(logits);
        int next;
        if (greedy || temperature <= 0.0) {
            lp.maxCoeff(&next);
        } else {
            Eigen::RowVectorXd tempered = log_softmax(logits / temperature);
            Eigen::RowVectorXd p = tempered.array().exp();
            std::discrete_distribution<int> d(p.data(), p.data() + p.size());
            next = d(rng);
        }
        gen.ids.push_back(next);
        lps.push_back(lp[next]);
        if (next == Vocabulary::kEos) break;
        Eigen::RowVectorXd z = embed_.w.row(next) * w_in_.w + hprev * w_rec_.w + b_hid_.w.row(0);
        hprev = z.array().tanh();
    }
    gen.logprobs = Eigen::Map<Vec>(lps.data(), Eigen::Index(lps.size()));
    gen.text = vocab_.decode(gen.ids);
    return gen;
}

PolicyModel::Generation PolicyModel::generate(const std::string& prompt, int max_tokens,
                                              double temperature, std::uint64_t seed,
                                              bool greedy) const {
    return generate_ids(vocab_.encode(prompt), max_tokens, temperature, seed, greedy);
}

std::vector<Param*> PolicyModel::params() {
    return {&embed_, &w_in_, &w_rec_, &b_hid_, &w_out_, &b_out_};
}
std::vector<const Param*> PolicyModel::params() const {
    return {&embed_, &w_in_, &w_rec_, &b_hid_, &w_out_, &b_out_};
}

void PolicyModel::zero_grad() {
    for (auto* p : params()) p->zero_grad();
}

void PolicyModel::save(const std::string& path) const {
    nlohmann::json header{{"kind", "policy"},
                          {"descriptor", descriptor()},
                          {"embed_dim", cfg_.embed_dim},
                          {"hidden_dim", cfg_.hidden_dim},
                          {"context_len", cfg_.context_len},
                          {"seed", cfg_.seed}};
    auto out = ckpt::open_writer(path, header);
    vocab_.write(out);
    for (auto* p : params()) ckpt::write_mat(out, p->w);
}

PolicyModel PolicyModel::load(const std::string& path) {
    nlohmann::json header;
    auto in = ckpt::open_reader(path, header);
    if (header.value("kind", "") != "policy") throw ParseError("not a policy checkpoint");
    PolicyConfig cfg;
    cfg.embed_dim = header.at("embed_dim");
    cfg.hidden_dim = header.at("hidden_dim");
    cfg.context_len = header.at("context_len");
    cfg.seed = header.at("seed").get<std::uint64_t>();
    PolicyModel m(Vocabulary::read(in), cfg);
    for (auto* p : m.params()) p->w = ckpt::read_mat(in);
    return m;
}

bool PolicyModel::same_parameters(const PolicyModel& other) const {
    auto a = params();
    auto b = other.params();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i]->w.rows() != b[i]->w.rows() || a[i]->w.cols() != b[i]->w.cols() ||
            a[i]->w != b[i]->w)
            return false;
    return true;
}

}  // namespace reclm
