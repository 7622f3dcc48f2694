#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rarecp/dataio.hpp"
#include "rarecp/grad/optim.hpp"
#include "rarecp/grad/tape.hpp"
#include "rarecp/mixture.hpp"
#include "rarecp/retrieval.hpp"
#include "rarecp/smooth_loss.hpp"

namespace rarecp {

struct TrainConfig {
  std::size_t n_experts = 3;
  ExpertConfig expert;
  GateConfig gate;
  SmoothLossConfig loss;
  double lambda_anchor = 5.0;
  double lambda_entropy = 0.02;
  double student_lr = 1e-3;
  double gate_lr = 4e-3;
  double teacher_lr = 1e-3;
  std::size_t epochs = 100;
  std::size_t gate_epochs = 100;
  std::size_t teacher_epochs = 20;
  std::size_t batch_size = 256;
  double teacher_init_noise = 0.02;
  bool normalize_contexts = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// One dataset's training material: the entries used for episodes and the
// descriptor the model is conditioned on.
struct TrainDataset {
  std::string name;
  std::vector<CalibrationEntry> entries;
  DatasetDescriptor descriptor;
};

// Entries and residuals in matrix form, contexts z-scored when requested.
struct PreparedDataset {
  grad::Tensor contexts;  // [n x p]
  std::vector<double> residuals;
  DatasetDescriptor descriptor;

  std::size_t size() const { return residuals.size(); }
};

PreparedDataset prepare_dataset(const TrainDataset& data, bool normalize_contexts);

// Held-out position j of a minibatch and the candidates it may retrieve from.
struct LooEpisode {
  std::size_t query;                    // index into the dataset
  std::vector<std::size_t> candidates;  // dataset indices, ascending, query excluded
  double residual = 0.0;
};

std::vector<LooEpisode> make_loo_episodes(std::span<const std::size_t> batch, std::span<const double> residuals);

// Dataset-level teacher maps, one per (expert, dataset).
struct TeacherBank {
  std::size_t n_experts = 0;
  std::size_t n_datasets = 0;
  std::vector<AffineMap> maps;  // expert-major

  const AffineMap& at(std::size_t expert, std::size_t dataset) const { return maps[expert * n_datasets + dataset]; }
  AffineMap& at(std::size_t expert, std::size_t dataset) { return maps[expert * n_datasets + dataset]; }
};

struct TrainLogRow {
  std::string stage;  // teacher, expert, gate
  int unit = -1;      // expert index, -1 for the gate
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double tau_q = 0.0;
};

struct TrainingLog {
  std::vector<TrainLogRow> rows;

  void write_csv(const std::filesystem::path& path) const;
  // Rows of one stage/unit in epoch order.
  std::vector<double> losses(const std::string& stage, int unit) const;
};

// Per-dataset minibatches for one step: batch[d] holds ascending dataset indices.
using Minibatch = std::vector<std::vector<std::size_t>>;

// Balanced chronological-order-free batching: each dataset is shuffled and cut
// into near-equal chunks of at most batch_size; datasets with fewer chunks wrap around.
std::vector<Minibatch> epoch_batches(std::span<const PreparedDataset> data, std::size_t batch_size,
                                     std::mt19937_64& rng);

struct LossParts {
  double total = 0.0;
  double interval = 0.0;  // mean LOO alpha-grid loss
  double anchor = 0.0;    // mean squared distance to the teacher (experts) or mean entropy (gate)
  std::size_t episodes = 0;
  std::size_t skipped = 0;  // episodes with fewer than two candidates
  std::size_t leaks = 0;    // supports that contained their own held-out query
};

// Dense LOO loss of teacher maps (one per dataset); `params` holds B_d, c_d for every dataset in order.
grad::Var teacher_loss(grad::Tape& tape, std::span<const grad::Var> params, std::span<const PreparedDataset> data,
                       const Minibatch& batch, const TrainConfig& config, double tau_q, LossParts* parts = nullptr);

// Expert loss with teacher anchoring; `params` follows HypernetworkParams::parameters() order.
grad::Var expert_loss(grad::Tape& tape, std::span<const grad::Var> params, const HypernetworkParams& expert,
                      std::span<const PreparedDataset> data, const Minibatch& batch, const TeacherBank& teachers,
                      std::size_t expert_index, const TrainConfig& config, double tau_q, LossParts* parts = nullptr);

// Frozen experts score each query against the same entries every epoch, so the
// scores are computed once: scores[d][m] is [n x n] with one row per query entry.
struct FrozenScores {
  std::vector<std::vector<grad::Tensor>> scores;
};
FrozenScores frozen_expert_scores(std::span<const HypernetworkParams> experts, std::span<const PreparedDataset> data);

// Mixed-support LOO loss minus lambda_ent times the mean gate entropy; experts are read only.
// With `frozen`, expert scores are read from it instead of being recomputed.
grad::Var gate_loss(grad::Tape& tape, std::span<const grad::Var> params, const GateParams& gate,
                    std::span<const HypernetworkParams> experts, std::span<const PreparedDataset> data,
                    const Minibatch& batch, const TrainConfig& config, double tau_q, LossParts* parts = nullptr,
                    const FrozenScores* frozen = nullptr);

TeacherBank fit_teacher_bank(std::span<const PreparedDataset> data, const TrainConfig& config,
                             TrainingLog* log = nullptr);

LossParts expert_training_step(HypernetworkParams& expert, grad::Adam& optimizer,
                               std::span<const PreparedDataset> data, const Minibatch& batch,
                               const TeacherBank& teachers, std::size_t expert_index, const TrainConfig& config,
                               double tau_q);

LossParts gate_training_step(GateParams& gate, grad::Adam& optimizer, std::span<const HypernetworkParams> experts,
                             std::span<const PreparedDataset> data, const Minibatch& batch,
                             const TrainConfig& config, double tau_q, const FrozenScores* frozen = nullptr);

enum class TrainStage { initialized, teachers, experts, gate };

// Runs teachers -> experts -> gate, refusing out-of-order stages.
class TrainPipeline {
 public:
  TrainPipeline(std::vector<TrainDataset> datasets, TrainConfig config);

  void fit_teachers();
  void train_experts();
  void train_gate();
  void run_all();

  TrainStage stage() const { return stage_; }
  const TrainConfig& config() const { return config_; }
  const TeacherBank& teachers() const { return teachers_; }
  const RareCpModel& model() const { return model_; }
  const TrainingLog& log() const { return log_; }
  std::span<const PreparedDataset> prepared() const { return prepared_; }
  // Held-out queries seen in any support during training (must stay zero).
  std::size_t leakage_count() const { return leakage_; }

 private:
  TrainConfig config_;
  std::vector<PreparedDataset> prepared_;
  TeacherBank teachers_;
  RareCpModel model_;
  TrainingLog log_;
  TrainStage stage_ = TrainStage::initialized;
  std::size_t leakage_ = 0;
};

struct TrainResult {
  TeacherBank teachers;
  RareCpModel model;
  TrainingLog log;
};

TrainResult train_pipeline(std::vector<TrainDataset> datasets, const TrainConfig& config);

}  // namespace rarecp
