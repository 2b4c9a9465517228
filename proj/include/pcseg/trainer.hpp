#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "pcseg/metrics.hpp"
#include "pcseg/network.hpp"

namespace pcseg {

class AdamOptimizer {
public:
    AdamOptimizer(ParamStore& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);

    void set_learning_rate(double lr) { lr_ = lr; }
    double learning_rate() const { return lr_; }

    // One update from the accumulated grads; grads are zeroed afterwards.
    void step();

private:
    ParamStore& params_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct TrainConfig {
    std::size_t iterations = 100;
    double learning_rate = 0.006;
    std::size_t batch_scenes = 1;   // scenes accumulated per update
    std::uint64_t seed = 1;
    double weight_smoothing = 1.0;  // class-weight count smoothing
    std::size_t eval_every = 10;    // validation cadence (iterations)
};

struct IterationLog {
    std::size_t iteration = 0;
    LossReport loss;
    double learning_rate = 0.0;
};

struct TrainResult {
    std::vector<IterationLog> curve;
    double best_val_oa = 0.0;
    std::size_t best_iteration = 0;
    ClassWeights weights;
};

// Step-decay schedule: lr multiplied by 0.1 at 60% and 85% of the run.
double scheduled_lr(double base_lr, std::size_t iteration, std::size_t total_iterations);

// Cycles through train_scenes, one batch per iteration, Adam updates with
// the step-decay schedule. Validates on val_scenes (the train scenes when
// empty) every eval_every iterations and keeps the best-OA parameter
// snapshot, restored into the model before returning. Non-finite loss
// aborts with a numeric error.
TrainResult train_model(SegmentationModel& model, const std::vector<PointCloud>& train_scenes,
                        const std::vector<PointCloud>& val_scenes, const TrainConfig& cfg,
                        const std::function<void(const IterationLog&)>& on_iteration = {});

// OA of model predictions over the given labeled scenes.
double evaluate_oa(const SegmentationModel& model, const std::vector<PointCloud>& scenes);

// Aggregated confusion matrix over labeled scenes.
ConfusionMatrix evaluate_confusion(const SegmentationModel& model,
                                   const std::vector<PointCloud>& scenes);

}  // namespace pcseg
