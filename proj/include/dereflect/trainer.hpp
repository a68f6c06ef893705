#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dereflect/augment.hpp"
#include "dereflect/datagen.hpp"
#include "dereflect/network.hpp"

namespace dereflect::train {

using datagen::MixTriple;
using datagen::SceneGroup;

enum class Stage { prior, foundation, invariant, decoder };

const char* stage_name(Stage s);
// Accepts "invariant_finetune" as an alias of "invariant".
Stage stage_from_name(const std::string& name);
inline constexpr Stage kAllStages[] = {Stage::prior, Stage::foundation, Stage::invariant, Stage::decoder};

struct StageConfig {
    Stage stage = Stage::foundation;
    double lr = 3e-4;
    int steps = 1000;
    // Samples accumulated per optimizer step.
    int batch_size = 1;
    int alternate_every = 100;
    double lambda_rec = diffusion::kDefaultLambdaRec;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    // Prior stage: codec pretraining steps and learning rate, run before
    // the denoiser steps.
    int codec_steps = 2000;
    double codec_lr = 1e-3;
    // Skip the stage-ordering check (ablations).
    bool allow_out_of_order = false;
    AugmentConfig augment;

    static StageConfig defaults(Stage s);
    void validate() const;
    nlohmann::json to_json() const;
    // Fields absent from `j` keep the stage defaults.
    static StageConfig from_json(Stage s, const nlohmann::json& j);
};

struct LogRecord {
    int step = 0;
    std::string stage;
    std::optional<double> l_diff_1;
    std::optional<double> l_diff_2;
    std::optional<double> l_con;
    std::optional<double> l_rec;
    double lr = 0.0;

    double total() const;
    nlohmann::json to_json() const;
};

using LogSink = std::function<void(const LogRecord&)>;

struct StageResult {
    std::vector<LogRecord> log;
    // Partition updated at each optimizer step (first of the pair for
    // stages training several partitions).
    std::vector<net::Partition> active;
    std::map<net::Partition, std::uint64_t> hash_before, hash_after;
};

// Partitions each stage may modify.
std::vector<net::Partition> trainable_partitions(Stage s);

// Runs one stage in place. Enforces stage ordering (ValidationError naming
// the missing stage) and the freeze contract (InvariantViolation).
StageResult run_stage(net::Model& model, const std::vector<SceneGroup>& data, const StageConfig& cfg,
                      const LogSink& sink = {});

double smoothed(const std::vector<LogRecord>& log, std::size_t begin, std::size_t end);

// Mean per-element squared difference of inference-time predictions for
// the first two mixed images of every group with at least two.
double probe_consistency(const net::Model& model, const std::vector<SceneGroup>& probe);

struct ToyEvaluation {
    double psnr_output = 0.0;
    double psnr_mixed = 0.0;
    double ssim_output = 0.0;
    double ssim_mixed = 0.0;
    std::size_t count = 0;
};

// Every mixed image of every group, scored against its transmission.
ToyEvaluation evaluate_toy(const net::Model& model, const std::vector<SceneGroup>& groups);

} // namespace dereflect::train
