#include "lenctl/model/trainer.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "lenctl/nnet/rng.hpp"

namespace lenctl::model {

double corpus_nll(const Transformer<float>& model, std::span<const corpus::EncodedPair> data,
                  std::size_t max_tokens) {
  if (data.empty()) return 0.0;
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& b : corpus::make_batches(data, max_tokens, 0)) {
    nnet::Graph<float> g(false);
    nnet::XentStats st;
    model.loss(g, b, 0.0f, RunOptions<float>{}, &st);
    nll += st.nll_sum;
    tokens += st.tokens;
  }
  return nll / static_cast<double>(tokens);
}

TrainReport train_model(Transformer<float>& model, std::span<const corpus::EncodedPair> train,
                        std::span<const corpus::EncodedPair> dev, const TrainOptions& opts) {
  const auto& h = opts.hyper;
  h.validate();
  if (train.empty()) throw ModelError("empty training corpus");
  auto& params = model.params();
  nnet::AdamState<float> adam;
  TrainReport rep;
  std::vector<float> best = params.flatten_values();
  rep.best_dev_loss = std::numeric_limits<double>::infinity();
  int bad_evals = 0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::int64_t step = 0;
  bool stop = false;

  auto evaluate = [&](double lr) {
    EvalPoint pt;
    pt.step = step;
    pt.lr = lr;
    pt.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    loss_sum = 0.0;
    loss_count = 0;
    if (dev.empty()) {
      pt.dev_loss = 0.0;
      best = params.flatten_values();
      rep.best_step = step;
    } else {
      pt.dev_loss = corpus_nll(model, dev, opts.max_tokens);
      if (!std::isfinite(pt.dev_loss)) throw TrainingError(step, "non-finite dev loss");
      if (pt.dev_loss < rep.best_dev_loss) {
        rep.best_dev_loss = pt.dev_loss;
        rep.best_step = step;
        best = params.flatten_values();
        bad_evals = 0;
      } else if (++bad_evals >= opts.patience) {
        rep.early_stopped = true;
        stop = true;
      }
    }
    rep.history.push_back(pt);
    if (opts.log) {
      Record r;
      r.add("event", "eval").add("step", step).add("lr", pt.lr).add("train_loss", pt.train_loss);
      r.add("dev_loss", pt.dev_loss).add("best_step", rep.best_step);
      opts.log(r);
    }
  };

  evaluate(nnet::lr_schedule(h, 0));
  params.zero_grad();
  int micro = 0;
  std::uint64_t micro_total = 0;
  for (int epoch = 0; epoch < opts.max_epochs && !stop; ++epoch) {
    const auto batches = corpus::make_batches(train, opts.max_tokens,
                                              nnet::combine_streams(opts.seed, static_cast<std::uint64_t>(epoch)));
    for (const auto& b : batches) {
      RunOptions<float> ro;
      ro.dropout = static_cast<float>(h.dropout);
      ro.attention_dropout = static_cast<float>(h.attention_dropout);
      ro.stream = nnet::combine_streams(opts.seed ^ 0x5eedULL, ++micro_total);
      try {
        nnet::Graph<float> g(true);
        nnet::Var l = model.loss(g, b, static_cast<float>(h.smoothing), ro);
        loss_sum += g.value(l)[0];
        ++loss_count;
        g.backward(l);
      } catch (const nnet::NonFiniteError& e) {
        throw TrainingError(step + 1, e.what());
      }
      if (++micro < h.accumulate) continue;
      micro = 0;
      ++step;
      const double lr = nnet::lr_schedule(h, step);
      try {
        nnet::adam_step(params, adam, h, lr, static_cast<double>(h.accumulate));
      } catch (const nnet::NonFiniteError& e) {
        throw TrainingError(step, e.what());
      }
      params.zero_grad();
      if (opts.eval_every > 0 && step % opts.eval_every == 0) evaluate(lr);
      if (stop || (opts.max_steps > 0 && step >= opts.max_steps)) {
        stop = true;
        break;
      }
    }
    if (opts.eval_every == 0 && (rep.history.empty() || rep.history.back().step != step)) {
      evaluate(nnet::lr_schedule(h, step));
    }
  }
  if (rep.history.back().step != step) evaluate(nnet::lr_schedule(h, step));
  rep.steps = step;
  params.assign_values(best);
  if (dev.empty()) rep.best_dev_loss = 0.0;
  return rep;
}

Checkpoint prepare_finetune(const Checkpoint& base, const ModelConfig& target, std::uint64_t seed) {
  const ModelConfig& bc = base.config;
  auto mismatch = [](const char* field, int a, int b) {
    throw ModelError(std::string("fine-tuning cannot change ") + field + " (base " + std::to_string(a) +
                     ", requested " + std::to_string(b) + ")");
  };
  if (target.d_model != bc.d_model) mismatch("d_model", bc.d_model, target.d_model);
  if (target.heads != bc.heads) mismatch("heads", bc.heads, target.heads);
  if (target.layers != bc.layers) mismatch("layers", bc.layers, target.layers);
  if (target.ffn_hidden != bc.ffn_hidden) mismatch("ffn_hidden", bc.ffn_hidden, target.ffn_hidden);
  if (uses_token(bc.length_mode) && !uses_token(target.length_mode)) {
    throw ModelError("fine-tuning cannot drop the length tokens of the base model");
  }
  const auto bv = encoding_variant(bc.length_mode);
  if (bv && encoding_variant(target.length_mode) != bv) {
    throw ModelError("fine-tuning cannot change or drop the base model's length encoding");
  }

  Checkpoint out;
  out.config = bc;
  out.config.length_mode = target.length_mode;
  out.config.levels = target.levels;
  out.config.base = target.base;
  out.hyper = base.hyper;
  out.merges = base.merges;
  out.vocab = base.vocab;
  out.lineage = checkpoint_hash(base);
  out.config_hash = base.config_hash;
  out.seed = seed;

  const int old_v = base.vocab.size();
  if (uses_token(target.length_mode) && !uses_token(bc.length_mode)) {
    for (auto c : corpus::kAllClasses) out.vocab.add(std::string(corpus::token_form(c)));
  }
  const int new_v = out.vocab.size();
  out.config.vocab = new_v;
  const std::size_t d = static_cast<std::size_t>(bc.d_model);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  for (std::size_t i = 0; i < base.params.size(); ++i) {
    const auto& p = base.params[i];
    if (new_v == old_v || (p.name != "embed" && p.name != "out.w" && p.name != "out.b")) {
      out.params.add(p.name, p.value);
      continue;
    }
    const std::size_t nv = static_cast<std::size_t>(new_v), ov = static_cast<std::size_t>(old_v);
    if (p.name == "embed") {
      nnet::Tensor<float> t(nnet::Shape{nv, d});
      std::copy(p.value.storage().begin(), p.value.storage().end(), t.data());
      for (std::size_t j = ov * d; j < nv * d; ++j) t[j] = static_cast<float>(n(rng));
      out.params.add(p.name, std::move(t));
    } else if (p.name == "out.w") {
      nnet::Tensor<float> t(nnet::Shape{d, nv});
      for (std::size_t r = 0; r < d; ++r)
        std::copy_n(p.value.data() + r * ov, ov, t.data() + r * nv);
      out.params.add(p.name, std::move(t));
    } else {
      nnet::Tensor<float> t(nnet::Shape{nv});
      std::copy_n(p.value.data(), ov, t.data());
      out.params.add(p.name, std::move(t));
    }
  }
  out.config.validate();
  return out;
}

}  // namespace lenctl::model
