#include "pcseg/trainer.hpp"

#include <cmath>

namespace pcseg {

AdamOptimizer::AdamOptimizer(ParamStore& params, double lr, double beta1, double beta2, double eps)
    : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, t] : params_.entries()) {
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
    }
}

void AdamOptimizer::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::size_t idx = 0;
    for (const auto& [name, entry] : params_.entries()) {
        Tensor t = entry;
        auto& values = t.values();
        auto& grad = t.grad();
        auto& m = m_[idx];
        auto& v = v_[idx];
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grad[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            values[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
        t.zero_grad();
        ++idx;
    }
}

double scheduled_lr(double base_lr, std::size_t iteration, std::size_t total_iterations) {
    const double progress =
        static_cast<double>(iteration) / static_cast<double>(std::max<std::size_t>(1, total_iterations));
    if (progress >= 0.85) return base_lr * 0.01;
    if (progress >= 0.60) return base_lr * 0.1;
    return base_lr;
}

namespace {

LossReport scene_loss_backward(const SegmentationModel& model, const PointCloud& scene,
                               const ClassWeights& weights, std::uint64_t sample_seed,
                               double grad_scale) {
    const ModelConfig& mc = model.config();
    GradTape tape;
    ForwardOutput out = model.forward(scene, sample_seed);
    Tensor wce = wce_loss(out.logits, scene.labels, weights);
    Tensor presence_labels =
        build_presence_labels(scene.labels, mc.class_count, mc.presence_mode);
    Tensor cr = cr_loss(sigmoid(out.per_point_presence), presence_labels);
    Tensor total = total_loss(wce, cr, mc.lambda);
    Tensor scaled = grad_scale == 1.0 ? total : scale(total, grad_scale);
    tape.backward(scaled);
    return make_loss_report(total, wce, cr, mc.lambda, mc.presence_mode);
}

}  // namespace

double evaluate_oa(const SegmentationModel& model, const std::vector<PointCloud>& scenes) {
    ConfusionMatrix cm = evaluate_confusion(model, scenes);
    return summarize(cm).oa;
}

ConfusionMatrix evaluate_confusion(const SegmentationModel& model,
                                   const std::vector<PointCloud>& scenes) {
    ConfusionMatrix cm(model.config().class_count);
    for (const PointCloud& scene : scenes) {
        if (!scene.labeled()) throw DataError("evaluation scene lacks labels");
        accumulate(cm, model.predict(scene, 0), scene.labels);
    }
    return cm;
}

TrainResult train_model(SegmentationModel& model, const std::vector<PointCloud>& train_scenes,
                        const std::vector<PointCloud>& val_scenes, const TrainConfig& cfg,
                        const std::function<void(const IterationLog&)>& on_iteration) {
    if (train_scenes.empty()) throw ConfigError("no training scenes");
    const ModelConfig& mc = model.config();
    for (const PointCloud& scene : train_scenes) {
        if (!scene.labeled()) throw DataError("training scene lacks labels");
        if (scene.class_count > mc.class_count) {
            throw DataError("scene has more classes than the model");
        }
    }

    // adaptive class weights from the whole training sample
    std::vector<std::size_t> histogram(mc.class_count, 0);
    for (const PointCloud& scene : train_scenes) {
        for (int l : scene.labels) histogram[static_cast<std::size_t>(l)]++;
    }
    TrainResult result;
    result.weights = compute_class_weights(histogram, mc.class_count, cfg.weight_smoothing);

    const std::vector<PointCloud>& validation = val_scenes.empty() ? train_scenes : val_scenes;
    AdamOptimizer opt(model.params(), cfg.learning_rate);
    const Rng seeder(cfg.seed);

    // best-on-validation snapshot
    std::vector<std::vector<double>> best_values;
    auto snapshot = [&] {
        best_values.clear();
        for (const auto& [name, t] : model.params().entries()) best_values.push_back(t.values());
    };
    auto restore = [&] {
        std::size_t idx = 0;
        for (const auto& [name, entry] : model.params().entries()) {
            Tensor t = entry;
            t.values() = best_values[idx++];
        }
    };

    result.best_val_oa = -1.0;
    std::size_t scene_cursor = 0;
    for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
        const double lr = scheduled_lr(cfg.learning_rate, iter, cfg.iterations);
        opt.set_learning_rate(lr);

        const std::size_t batch = std::max<std::size_t>(1, cfg.batch_scenes);
        LossReport mean{};
        for (std::size_t b = 0; b < batch; ++b) {
            const PointCloud& scene = train_scenes[scene_cursor % train_scenes.size()];
            ++scene_cursor;
            LossReport r = scene_loss_backward(model, scene, result.weights,
                                               seeder.split(iter * 1000 + b).raw(),
                                               1.0 / static_cast<double>(batch));
            mean.total += r.total / static_cast<double>(batch);
            mean.wce += r.wce / static_cast<double>(batch);
            mean.cr += r.cr / static_cast<double>(batch);
            mean.lambda = r.lambda;
            mean.presence_mode = r.presence_mode;
        }
        if (!std::isfinite(mean.total)) {
            throw NumericError("training diverged at iteration " + std::to_string(iter) +
                               " (non-finite loss)");
        }
        opt.step();

        IterationLog log;
        log.iteration = iter;
        log.loss = mean;
        log.learning_rate = lr;
        result.curve.push_back(log);
        if (on_iteration) on_iteration(log);

        const bool last = iter + 1 == cfg.iterations;
        if (last || (cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0)) {
            const double oa = evaluate_oa(model, validation);
            if (oa > result.best_val_oa) {
                result.best_val_oa = oa;
                result.best_iteration = iter + 1;
                snapshot();
            }
        }
    }
    if (!best_values.empty()) restore();
    return result;
}

}  // namespace pcseg
