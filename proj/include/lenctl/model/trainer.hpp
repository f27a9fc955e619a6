#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lenctl/corpus.hpp"
#include "lenctl/model/checkpoint.hpp"
#include "lenctl/model/transformer.hpp"
#include "lenctl/nnet/optim.hpp"
#include "lenctl/record.hpp"

namespace lenctl::model {

class TrainingError : public ModelError {
 public:
  TrainingError(std::int64_t step, const std::string& what)
      : ModelError("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

struct TrainOptions {
  nnet::TrainHyper hyper;
  std::size_t max_tokens = 800;  // per micro-batch, source + target tokens
  int max_epochs = 20;
  std::int64_t max_steps = 0;    // optimizer updates; 0 = no cap
  std::int64_t eval_every = 0;   // updates between dev evaluations; 0 = once per epoch
  int patience = 5;              // evaluations without improvement before stopping
  std::uint64_t seed = 1;
  std::function<void(const Record&)> log;
};

struct EvalPoint {
  std::int64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean smoothed loss since the previous evaluation
  double dev_loss = 0.0;    // per-token negative log-likelihood
};

struct TrainReport {
  std::int64_t steps = 0;
  std::int64_t best_step = 0;
  double best_dev_loss = 0.0;
  bool early_stopped = false;
  std::vector<EvalPoint> history;
};

// Per-token negative log-likelihood of the corpus under the model.
double corpus_nll(const Transformer<float>& model, std::span<const corpus::EncodedPair> data,
                  std::size_t max_tokens);

// Trains in place and leaves the model at its best dev-loss parameters (the
// final ones when dev is empty). Throws TrainingError on a non-finite loss or
// gradient.
TrainReport train_model(Transformer<float>& model, std::span<const corpus::EncodedPair> train,
                        std::span<const corpus::EncodedPair> dev, const TrainOptions& opts);

// Starting point for fine-tuning: copies every base parameter, appends the
// three length tokens to the vocabulary when `mode` needs them (new embedding
// rows drawn from `seed`, new output columns zero), and records the base hash
// as lineage. The architecture of `target` must match the base.
Checkpoint prepare_finetune(const Checkpoint& base, const ModelConfig& target, std::uint64_t seed);

}  // namespace lenctl::model
