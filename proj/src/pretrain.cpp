#include "structlm/pretrain.hpp"

namespace structlm {

Pretrainer::Pretrainer(ModelConfig model, PretrainConfig objective, TrainConfig train,
                       std::vector<TokenizedSequence> corpus, std::vector<std::string> doc_ids)
    : model_(model),
      objective_(objective),
      train_(train),
      corpus_(std::move(corpus)),
      schedule_(corpus_.empty() ? 1 : corpus_.size(), train.batch_size, train.seed) {
    model_.validate();
    objective_.validate();
    train_.validate();
    if (corpus_.empty()) throw config_error("pretrain: empty corpus");
    if (doc_ids.size() != corpus_.size()) throw config_error("pretrain: one doc id per sequence required");
    if (objective_.cpc_enabled && !model_.cpc_head) throw config_error("pretrain: CPC objective needs the CPC head");
    if (objective_.num_areas != model_.num_areas) throw config_error("pretrain: num_areas differs between configs");
    for (const auto& id : doc_ids) doc_hashes_.push_back(hash_string(id));
}

void Pretrainer::init() {
    TrainerState s;
    s.params = Parameters::init(model_, train_.seed);
    s.adam = AdamState::for_params(s.params.tensors());
    s.rng = Rng(derive_seed(train_.seed, {0x64726f70}));
    restore(std::move(s));
}

void Pretrainer::restore(TrainerState state) {
    const auto expected = Parameters::init(model_, 0).named();
    const auto got = state.params.named();
    if (got.size() != expected.size()) throw config_error("pretrain: parameter list does not match the model config");
    for (std::size_t i = 0; i < got.size(); ++i) {
        if (got[i].name != expected[i].name || got[i].tensor.shape() != expected[i].tensor.shape()) {
            throw config_error("pretrain: parameter '" + got[i].name + "' does not match the model config");
        }
    }
    state_ = std::move(state);
    optimizer_.emplace(state_.params);
    if (state_.adam.first_moment.size() == got.size()) {
        optimizer_->state() = state_.adam;
    } else {
        state_.adam = optimizer_->state();
    }
}

StepRecord Pretrainer::step() {
    if (!optimizer_) throw contract_error("pretrain: call init() or restore() first");
    const std::size_t s = state_.step;
    const auto batch = schedule_.batch(s);
    const ForwardOptions options{.trim_padding = true, .training = model_.dropout > 0, .rng = &state_.rng};

    real mvlm_sum = 0, cpc_sum = 0;
    std::size_t cpc_correct = 0, cpc_count = 0;
    optimizer_->zero_grad();
    accumulate_batch(batch.size(), [&](std::size_t k) {
        const auto& entry = batch[k];
        Rng rng(derive_seed(train_.seed, {doc_hashes_[entry.example], entry.epoch}));
        const auto example = make_pretrain_example(corpus_[entry.example], objective_, model_.vocab_size, rng);
        const auto hidden = encode(example.sequence, state_.params, model_, options);
        auto loss = pretrain_objective(hidden, state_.params, example, objective_);
        mvlm_sum += loss.mvlm_loss;
        cpc_sum += loss.cpc_loss;
        cpc_correct += loss.cpc_correct;
        cpc_count += loss.cpc_count;
        return loss.loss;
    });
    const real lr = train_.lr_at(s);
    optimizer_->step(lr);
    state_.adam = optimizer_->state();
    ++state_.step;

    StepRecord rec;
    rec.step = s;
    rec.lr = lr;
    const auto n = static_cast<real>(batch.size());
    rec.mvlm_loss = mvlm_sum / n;
    if (objective_.cpc_enabled) {
        rec.cpc_loss = cpc_sum / n;
        rec.cpc_acc = cpc_count ? static_cast<real>(cpc_correct) / static_cast<real>(cpc_count) : real{0};
    }
    return rec;
}

void Pretrainer::run(std::size_t until, const std::function<void(const StepRecord&)>& on_step) {
    until = std::min(until, train_.steps);
    while (state_.step < until) {
        const auto rec = step();
        if (on_step) on_step(rec);
    }
}

PretrainEval evaluate_pretrain(const Parameters& params, const ModelConfig& model, const PretrainConfig& objective,
                               const std::vector<TokenizedSequence>& sequences, std::uint64_t seed) {
    PretrainEval out;
    double mvlm = 0, cpc = 0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        Rng rng(derive_seed(seed, {0x6576616c, i}));
        const auto example = make_pretrain_example(sequences[i], objective, model.vocab_size, rng);
        const auto hidden = encode(example.sequence, params, model, ForwardOptions{.trim_padding = true});
        const auto loss = pretrain_objective(hidden, params, example, objective);
        mvlm += static_cast<double>(loss.mvlm_loss) * static_cast<double>(loss.mvlm_count);
        cpc += static_cast<double>(loss.cpc_loss) * static_cast<double>(loss.cpc_count);
        out.mvlm_tokens += loss.mvlm_count;
        out.cpc_tokens += loss.cpc_count;
        correct += loss.cpc_correct;
    }
    if (out.mvlm_tokens) out.mvlm_loss = static_cast<real>(mvlm / static_cast<double>(out.mvlm_tokens));
    if (out.cpc_tokens) {
        out.cpc_loss = static_cast<real>(cpc / static_cast<double>(out.cpc_tokens));
        out.cpc_accuracy = static_cast<real>(static_cast<double>(correct) / static_cast<double>(out.cpc_tokens));
    }
    return out;
}

}  // namespace structlm
