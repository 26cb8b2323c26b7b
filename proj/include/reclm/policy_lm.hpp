#pragma once

#include "reclm/instruction.hpp"
#include "reclm/mlp.hpp"
#include "reclm/tokenizer.hpp"

namespace reclm {

struct PolicyConfig {
    int embed_dim = 32;
    int hidden_dim = 64;
    int context_len = 512;
    std::uint64_t seed = 0;
};

// Small autoregressive recurrent LM. h_t = tanh(e(x_t) Wx + h_{t-1} Wh + b),
// logits_t = h_t Wo + bo, with a begin token prepended as the first input.
class PolicyModel {
  public:
    PolicyModel() = default;
    PolicyModel(Vocabulary vocab, const PolicyConfig& cfg);

    const Vocabulary& vocab() const { return vocab_; }
    const PolicyConfig& config() const { return cfg_; }
    std::string descriptor() const;
    std::size_t parameter_count() const;

    // entry t = log P(tokens[t] | tokens[<t]); length matches tokens
    Vec forward_logprobs(const std::vector<int>& tokens) const;
    // full per-step conditional log distributions, one row per position
    Mat forward_logprob_rows(const std::vector<int>& tokens) const;

    double masked_loss(const std::vector<MaskedSequence>& batch) const;

    struct MaskedTrainConfig {
        int epochs = 5;
        int batch_size = 8;
        double learning_rate = 1e-2;
        std::uint64_t seed = 0;
    };
    std::vector<double> train_masked(const std::vector<MaskedSequence>& corpus,
                                     const MaskedTrainConfig& cfg);

    struct Generation {
        std::vector<int> ids;  // generated tokens only
        std::string text;
        Vec logprobs;  // untempered model log-probs of the generated tokens
    };
    Generation generate(const std::string& prompt, int max_tokens, double temperature,
                        std::uint64_t seed, bool greedy = false) const;
    Generation generate_ids(const std::vector<int>& prompt_ids, int max_tokens, double temperature,
                            std::uint64_t seed, bool greedy = false) const;

    // Adds the gradient of  -sum_t weights[t] * log P(tokens[t] | tokens[<t])
    // into the parameter grads (loss convention). Used by masked tuning and PPO.
    void add_weighted_logprob_grad(const std::vector<int>& tokens, const Vec& weights);

    std::vector<Param*> params();
    std::vector<const Param*> params() const;
    void zero_grad();

    // Recurrent body access for heads that reuse it (reward scoring).
    // `inputs` are raw input ids (caller prepends the begin token).
    Mat run_hidden(const std::vector<int>& inputs) const;  // T x dh
    // BPTT for an external gradient on every hidden state; touches body params only.
    void backprop_hidden(const std::vector<int>& inputs, const Mat& hidden, const Mat& g_hidden);

    Param& embed() { return embed_; }
    Param& out_weight() { return w_out_; }
    Param& out_bias() { return b_out_; }

    void save(const std::string& path) const;
    static PolicyModel load(const std::string& path);

    bool same_parameters(const PolicyModel& other) const;

  private:
    Vocabulary vocab_;
    PolicyConfig cfg_;
    Param embed_;   // V x de
    Param w_in_;    // de x dh
    Param w_rec_;   // dh x dh
    Param b_hid_;   // 1 x dh
    Param w_out_;   // dh x V
    Param b_out_;   // 1 x V

    Mat hidden_states(const std::vector<int>& inputs) const;  // T x dh
};

}  // namespace reclm
