#pragma once

#include <array>

#include "msopt/cuts.hpp"
#include "msopt/dataset.hpp"
#include "msopt/rng.hpp"
#include "msopt/tensor.hpp"

namespace msopt {

// Decoder-only sequence model that maps (lambda, t_rel) conditioning plus a
// prefix of cuts to the next cut and its position token. The conditioning
// vector enters as one prepended token without positional encoding; the
// output-sequence embeddings carry sinusoidal positions. Input and output
// embeddings are linear layers; the softmax applies only to the four token
// logits.
struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 128;
  int max_seq_len = 128;
  int input_dim = 0;  // lambda entries + 1 for t_rel
  int state_dim = 0;  // beta dimension
  double dropout_rate = 0.0;

  int token_dim() const { return state_dim + 1 + 4; }
  int out_dim() const { return state_dim + 1 + 4; }
  void validate() const;
};

// Standardization of regression targets, estimated on the training split.
struct NormStats {
  Vec beta_mean, beta_std;
  double alpha_mean = 0.0;
  double alpha_std = 1.0;
};

NormStats compute_norm_stats(const Dataset& train, int state_dim);

struct TrainingMeta {
  int epochs = 0;
  std::uint64_t seed = 0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  double best_val_loss = 0.0;
  std::string family;
  int stages = 0;
};

struct ModelCheckpoint {
  int version = 1;
  ModelConfig config;
  ParamSet params;
  ParamSet adam_m, adam_v;
  long adam_step = 0;
  double gamma1 = 0.9, gamma2 = 0.999, adam_delta = 1e-8;
  NormStats norm;
  TrainingMeta meta;
};

ModelCheckpoint init_model(const ModelConfig& config, std::uint64_t seed);

struct PredictedElement {
  Vec beta;
  double alpha = 0.0;
  std::array<double, 4> tau_probs{};
};

// Teacher-forced forward: position k of the prefix predicts element k+1.
// Prefix elements are raw cuts; predictions come back de-standardized.
std::vector<PredictedElement> model_forward(const ModelCheckpoint& ckpt,
                                            const Vec& conditioning,
                                            std::span<const SequenceElement> prefix);

// Combined squared-error + cross-entropy, averaged over positions; operates
// on exactly the values it is given.
double sequence_loss(std::span<const PredictedElement> pred,
                     std::span<const SequenceElement> target_from_k2);

// Mean teacher-forced loss over a batch in standardized space; accumulates
// analytic parameter gradients when grads is non-null.
double model_loss_and_grad(const ModelCheckpoint& ckpt,
                           std::span<const CutSequenceExample> batch,
                           ParamSet* grads, Rng* dropout_rng = nullptr);

struct TrainOptions {
  int epochs = 50;
  int batch_size = 16;
  double lr = 1e-3;
  double gamma1 = 0.9, gamma2 = 0.999, adam_delta = 1e-8;
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct TrainResult {
  ModelCheckpoint checkpoint;  // best validation epoch
  std::vector<double> train_losses;
  std::vector<double> val_losses;
};

// Algorithm-as-printed Adam (constant bias corrections m/(1-g1), v/(1-g2))
// with teacher forcing; keeps the best-validation parameters. Throws
// TrainingDiverged when the loss stops being finite.
TrainResult train_model(const Dataset& train, const Dataset& val,
                        ModelConfig config, const TrainOptions& opts);

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One Adam update from already-accumulated gradients (exposed for tests).
void adam_step(ModelCheckpoint& ckpt, const ParamSet& grads, double lr);

struct GenerationResult {
  CutSet cutset;
  bool malformed = false;  // no end token within max_len
  int generated = 0;       // cuts emitted after the trivial seed
};

// Autoregressive decoding from the trivial cut; argmax token choice;
// stops at the end token or max_len.
GenerationResult generate_cuts(const ModelCheckpoint& ckpt, const Vec& conditioning,
                               const Cut& trivial, int max_len, int stage);

std::string checkpoint_to_json(const ModelCheckpoint& ckpt);
ModelCheckpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path);
ModelCheckpoint load_checkpoint(const std::string& path);

}  // namespace msopt
