#include "insarforge/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "insarforge/error.hpp"
#include "insarforge/geometry.hpp"
#include "insarforge/io.hpp"
#include "insarforge/rng.hpp"

namespace insarforge::cnn {

namespace {

constexpr char kModelMagic[4] = {'I', 'C', 'N', 'N'};
constexpr std::uint16_t kModelVersion = 1;
constexpr std::size_t kSchemeBytes = 32;
constexpr int kChunks = 4;  // fixed split of every batch

template <typename T>
class Engine {
public:
    struct Work {
        std::vector<std::vector<T>> act;  // act[0] input, act[i + 1] output of layer i
        std::vector<std::vector<int>> argmax;
        std::vector<T> col, colt, dcol, delta, delta_prev;
    };

    Engine(int side, int n_classes) : layers_(topology(side, n_classes)) {
        n_params_ = layers_.back().bias_offset + layers_.back().bias_count;
    }

    const std::vector<LayerSpec>& layers() const { return layers_; }
    std::size_t param_count() const { return n_params_; }
    int input_size() const { return layers_.front().in_side * layers_.front().in_side; }
    int n_classes() const { return layers_.back().out_channels; }

    void prepare(Work& w) const {
        w.act.resize(layers_.size() + 1);
        w.argmax.resize(layers_.size());
        w.act[0].resize(input_size());
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const auto& l = layers_[i];
            w.act[i + 1].assign(static_cast<std::size_t>(l.out_channels) * l.out_side * l.out_side, T(0));
            if (l.kind == LayerKind::pool) w.argmax[i].assign(w.act[i + 1].size(), 0);
        }
    }

    void forward(const T* p, Work& w) const {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const auto& l = layers_[i];
            const std::vector<T>& in = w.act[i];
            std::vector<T>& out = w.act[i + 1];
            switch (l.kind) {
            case LayerKind::conv: conv_forward(l, p, in, out, w); break;
            case LayerKind::pool: pool_forward(l, in, out, w.argmax[i]); break;
            case LayerKind::fc: fc_forward(l, p, in, out); break;
            }
            if (l.relu)
                for (T& v : out) v = v > T(0) ? v : T(0);
        }
    }

    /// Softmax of the logits in double.
    std::vector<double> probabilities(const Work& w) const {
        const auto& z = w.act.back();
        std::vector<double> p(z.size());
        const double m = static_cast<double>(*std::max_element(z.begin(), z.end()));
        double s = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(static_cast<double>(z[i]) - m);
        for (double& v : p) v /= s;
        return p;
    }

    /// Accumulates d(loss)/d(params) * scale into grad; returns the loss. Requires a prior forward.
    T backward(const T* p, Work& w, int label, T* grad, T scale) const {
        const auto& z = w.act.back();
        T m = *std::max_element(z.begin(), z.end());
        T s = 0;
        for (T v : z) s += std::exp(v - m);
        const T log_s = std::log(s) + m;
        const T loss = log_s - z[label];
        w.delta.resize(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) w.delta[i] = scale * (std::exp(z[i] - log_s) - (int(i) == label ? T(1) : T(0)));

        for (std::size_t ii = layers_.size(); ii-- > 0;) {
            const auto& l = layers_[ii];
            const std::vector<T>& in = w.act[ii];
            const std::vector<T>& out = w.act[ii + 1];
            if (l.relu)
                for (std::size_t k = 0; k < out.size(); ++k)
                    if (!(out[k] > T(0))) w.delta[k] = T(0);
            const bool need_input_grad = ii > 0;
            w.delta_prev.assign(need_input_grad ? in.size() : 0, T(0));
            switch (l.kind) {
            case LayerKind::conv: conv_backward(l, p, in, w, grad, need_input_grad); break;
            case LayerKind::pool:
                for (std::size_t k = 0; k < out.size(); ++k) w.delta_prev[w.argmax[ii][k]] += w.delta[k];
                break;
            case LayerKind::fc: fc_backward(l, p, in, w, grad, need_input_grad); break;
            }
            std::swap(w.delta, w.delta_prev);
        }
        return loss;
    }

    /// ReLU on/off pattern and pooling winners, for kink detection.
    std::vector<int> signature(const Work& w) const {
        std::vector<int> sig;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (layers_[i].kind == LayerKind::pool) sig.insert(sig.end(), w.argmax[i].begin(), w.argmax[i].end());
            if (layers_[i].relu)
                for (T v : w.act[i + 1]) sig.push_back(v > T(0));
        }
        return sig;
    }

private:
    static void im2col(const LayerSpec& l, const std::vector<T>& in, std::vector<T>& col) {
        const int k = l.kernel, s = l.in_side, o = l.out_side;
        col.resize(static_cast<std::size_t>(l.in_channels) * k * k * o * o);
        T* dst = col.data();
        for (int c = 0; c < l.in_channels; ++c)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx)
                    for (int y = 0; y < o; ++y) {
                        const T* src = &in[(static_cast<std::size_t>(c) * s + y + ky) * s + kx];
                        std::copy(src, src + o, dst);
                        dst += o;
                    }
    }

    void conv_forward(const LayerSpec& l, const T* p, const std::vector<T>& in, std::vector<T>& out, Work& w) const {
        im2col(l, in, w.col);
        const int kk = l.in_channels * l.kernel * l.kernel;
        const int n = l.out_side * l.out_side;
        const T* wt = p + l.weight_offset;
        const T* b = p + l.bias_offset;
        for (int oc = 0; oc < l.out_channels; ++oc) {
            T* dst = &out[static_cast<std::size_t>(oc) * n];
            std::fill(dst, dst + n, b[oc]);
            for (int k = 0; k < kk; ++k) {
                const T a = wt[static_cast<std::size_t>(oc) * kk + k];
                const T* src = &w.col[static_cast<std::size_t>(k) * n];
                for (int j = 0; j < n; ++j) dst[j] += a * src[j];
            }
        }
    }

    void conv_backward(const LayerSpec& l, const T* p, const std::vector<T>& in, Work& w, T* grad,
                       bool need_input_grad) const {
        im2col(l, in, w.col);
        const int kk = l.in_channels * l.kernel * l.kernel;
        const int n = l.out_side * l.out_side;
        w.colt.resize(static_cast<std::size_t>(n) * kk);
        for (int k = 0; k < kk; ++k)
            for (int j = 0; j < n; ++j) w.colt[static_cast<std::size_t>(j) * kk + k] = w.col[static_cast<std::size_t>(k) * n + j];
        T* gw = grad + l.weight_offset;
        T* gb = grad + l.bias_offset;
        const T* wt = p + l.weight_offset;
        for (int oc = 0; oc < l.out_channels; ++oc) {
            const T* d = &w.delta[static_cast<std::size_t>(oc) * n];
            T* row = gw + static_cast<std::size_t>(oc) * kk;
            T bsum = 0;
            for (int j = 0; j < n; ++j) {
                const T dj = d[j];
                bsum += dj;
                if (dj == T(0)) continue;
                const T* src = &w.colt[static_cast<std::size_t>(j) * kk];
                for (int k = 0; k < kk; ++k) row[k] += dj * src[k];
            }
            gb[oc] += bsum;
        }
        if (!need_input_grad) return;
        w.dcol.assign(static_cast<std::size_t>(kk) * n, T(0));
        for (int oc = 0; oc < l.out_channels; ++oc) {
            const T* d = &w.delta[static_cast<std::size_t>(oc) * n];
            for (int k = 0; k < kk; ++k) {
                const T a = wt[static_cast<std::size_t>(oc) * kk + k];
                T* dst = &w.dcol[static_cast<std::size_t>(k) * n];
                for (int j = 0; j < n; ++j) dst[j] += a * d[j];
            }
        }
        const int ks = l.kernel, s = l.in_side, o = l.out_side;
        const T* src = w.dcol.data();
        for (int c = 0; c < l.in_channels; ++c)
            for (int ky = 0; ky < ks; ++ky)
                for (int kx = 0; kx < ks; ++kx)
                    for (int y = 0; y < o; ++y) {
                        T* dst = &w.delta_prev[(static_cast<std::size_t>(c) * s + y + ky) * s + kx];
                        for (int x = 0; x < o; ++x) dst[x] += src[x];
                        src += o;
                    }
    }

    static void pool_forward(const LayerSpec& l, const std::vector<T>& in, std::vector<T>& out, std::vector<int>& arg) {
        const int s = l.in_side, o = l.out_side, k = l.kernel;
        for (int c = 0; c < l.in_channels; ++c)
            for (int y = 0; y < o; ++y)
                for (int x = 0; x < o; ++x) {
                    int best = (c * s + y * k) * s + x * k;
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) {
                            const int idx = (c * s + y * k + dy) * s + x * k + dx;
                            if (in[idx] > in[best]) best = idx;
                        }
                    const int oi = (c * o + y) * o + x;
                    out[oi] = in[best];
                    arg[oi] = best;
                }
    }

    // weights stored [in][out]
    static void fc_forward(const LayerSpec& l, const T* p, const std::vector<T>& in, std::vector<T>& out) {
        const int no = l.out_channels;
        const T* wt = p + l.weight_offset;
        std::copy(p + l.bias_offset, p + l.bias_offset + no, out.begin());
        for (std::size_t k = 0; k < in.size(); ++k) {
            const T a = in[k];
            if (a == T(0)) continue;
            const T* row = wt + k * no;
            for (int j = 0; j < no; ++j) out[j] += a * row[j];
        }
    }

    static void fc_backward(const LayerSpec& l, const T* p, const std::vector<T>& in, Work& w, T* grad,
                            bool need_input_grad) {
        const int no = l.out_channels;
        const T* wt = p + l.weight_offset;
        T* gw = grad + l.weight_offset;
        T* gb = grad + l.bias_offset;
        for (int j = 0; j < no; ++j) gb[j] += w.delta[j];
        for (std::size_t k = 0; k < in.size(); ++k) {
            const T a = in[k];
            const T* row = wt + k * no;
            if (a != T(0)) {
                T* grow = gw + k * no;
                for (int j = 0; j < no; ++j) grow[j] += a * w.delta[j];
            }
            if (need_input_grad) {
                T s = 0;
                for (int j = 0; j < no; ++j) s += row[j] * w.delta[j];
                w.delta_prev[k] = s;
            }
        }
    }

    std::vector<LayerSpec> layers_;
    std::size_t n_params_ = 0;
};

template <typename T>
void load_input(std::span<const std::uint8_t> gray, bool zero_centered, std::vector<T>& dst) {
    for (std::size_t i = 0; i < gray.size(); ++i) dst[i] = static_cast<T>(normalize_gray(gray[i], zero_centered));
}

/// Dihedral transform d (0..7) of a square patch.
void transform_patch(std::span<const std::uint8_t> src, int side, int d, std::vector<std::uint8_t>& dst) {
    dst.resize(src.size());
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) {
            int rr = r, cc = c;
            if (d & 4) cc = side - 1 - cc;
            switch (d & 3) {
            case 1: std::tie(rr, cc) = std::pair{cc, side - 1 - rr}; break;
            case 2: std::tie(rr, cc) = std::pair{side - 1 - rr, side - 1 - cc}; break;
            case 3: std::tie(rr, cc) = std::pair{side - 1 - cc, rr}; break;
            default: break;
            }
            dst[static_cast<std::size_t>(r) * side + c] = src[static_cast<std::size_t>(rr) * side + cc];
        }
}

void check_model(const CnnModel& m) {
    if (m.params.size() != parameter_count(m.input_side, m.n_classes))
        throw DataError("model parameter count does not match its topology");
}

std::string layer_name(const LayerSpec& l, int index) {
    const char* kind = l.kind == LayerKind::conv ? "conv" : "fc";
    return std::string(kind) + std::to_string(index);
}

} // namespace

std::vector<LayerSpec> topology(int input_side, int n_classes) {
    if (input_side != 64 && input_side != 128 && input_side != 224)
        throw UsageError("unsupported input side " + std::to_string(input_side) + " (use 64, 128 or 224)");
    if (n_classes != 2 && n_classes != 3 && n_classes != 5 && n_classes != 91)
        throw UsageError("unsupported class count " + std::to_string(n_classes) + " (use 2, 3, 5 or 91)");
    std::vector<LayerSpec> out;
    std::size_t offset = 0;
    int side = input_side, channels = 1;
    auto conv = [&](int filters, int k) {
        LayerSpec l{LayerKind::conv, channels, filters, k, side, side - k + 1, true, offset,
                    static_cast<std::size_t>(filters) * channels * k * k, 0, static_cast<std::size_t>(filters)};
        l.bias_offset = offset + l.weight_count;
        offset = l.bias_offset + l.bias_count;
        out.push_back(l);
        side = l.out_side;
        channels = filters;
    };
    auto pool = [&] {
        out.push_back({LayerKind::pool, channels, channels, 2, side, side / 2, false, offset, 0, offset, 0});
        side /= 2;
    };
    auto fc = [&](int units, bool relu) {
        const int in = channels * side * side;
        LayerSpec l{LayerKind::fc, in, units, 1, 1, 1, relu, offset, static_cast<std::size_t>(in) * units, 0,
                    static_cast<std::size_t>(units)};
        l.bias_offset = offset + l.weight_count;
        offset = l.bias_offset + l.bias_count;
        out.push_back(l);
        side = 1;
        channels = units;
    };
    conv(8, 5);
    pool();
    conv(16, 3);
    pool();
    conv(32, 3);
    conv(32, 3);
    conv(32, 3);
    pool();
    fc(256, true);
    fc(128, true);
    fc(n_classes, false);
    return out;
}

std::size_t parameter_count(int input_side, int n_classes) {
    const auto t = topology(input_side, n_classes);
    return t.back().bias_offset + t.back().bias_count;
}

CnnModel init_model(int input_side, int n_classes, std::uint64_t seed) {
    CnnModel m;
    m.input_side = input_side;
    m.n_classes = n_classes;
    const auto layers = topology(input_side, n_classes);
    m.params.assign(parameter_count(input_side, n_classes), 0.0f);
    Rng rng(seed);
    for (const auto& l : layers) {
        if (l.kind == LayerKind::pool) continue;
        const double fan_in = l.kind == LayerKind::conv ? l.in_channels * l.kernel * l.kernel : l.in_channels;
        const double sd = std::sqrt(2.0 / fan_in);
        for (std::size_t i = 0; i < l.weight_count; ++i)
            m.params[l.weight_offset + i] = static_cast<float>(sd * rng.normal());
    }
    return m;
}

struct Predictor::Impl {
    const CnnModel* model;
    Engine<float> engine;
    Engine<float>::Work work;
    explicit Impl(const CnnModel& m) : model(&m), engine(m.input_side, m.n_classes) { engine.prepare(work); }
};

Predictor::Predictor(const CnnModel& model) : impl_(std::make_unique<Impl>(model)) { check_model(model); }
Predictor::~Predictor() = default;
Predictor::Predictor(Predictor&&) noexcept = default;
Predictor& Predictor::operator=(Predictor&&) noexcept = default;

std::vector<double> Predictor::operator()(std::span<const std::uint8_t> gray) {
    const auto& m = *impl_->model;
    if (gray.size() != static_cast<std::size_t>(m.input_side) * m.input_side)
        throw DataError("patch has " + std::to_string(gray.size()) + " pixels, model expects " +
                        std::to_string(m.input_side) + "x" + std::to_string(m.input_side));
    load_input(gray, m.zero_centered, impl_->work.act[0]);
    impl_->engine.forward(m.params.data(), impl_->work);
    return impl_->engine.probabilities(impl_->work);
}

std::vector<double> Predictor::operator()(const Raster& gray) {
    require_unit(gray, Unit::gray_u8, "predict_proba");
    const auto& m = *impl_->model;
    if (gray.width() != m.input_side || gray.height() != m.input_side)
        throw DataError("patch is " + std::to_string(gray.width()) + "x" + std::to_string(gray.height()) +
                        ", model expects " + std::to_string(m.input_side) + "x" + std::to_string(m.input_side));
    std::vector<std::uint8_t> px(gray.size());
    auto v = gray.values();
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(v[i]);
    return (*this)(std::span<const std::uint8_t>(px));
}

std::vector<double> predict_proba(const CnnModel& model, const Raster& gray) { return Predictor(model)(gray); }

double accuracy(const CnnModel& model, const dataset::LabeledDataset& data, std::span<const std::size_t> indices) {
    Predictor predict(model);
    std::size_t correct = 0, total = 0;
    auto one = [&](std::size_t i) {
        const auto p = predict(data.patch(i));
        correct += static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) == data.labels[i];
        ++total;
    };
    if (indices.empty())
        for (std::size_t i = 0; i < data.count(); ++i) one(i);
    else
        for (std::size_t i : indices) one(i);
    return total ? static_cast<double>(correct) / total : 0.0;
}

TrainResult train(const CnnModel& initial, const dataset::LabeledDataset& data, const TrainConfig& cfg) {
    check_model(initial);
    if (cfg.batch_size < 1) throw UsageError("batch size must be at least 1");
    if (cfg.max_epochs < 1) throw UsageError("max_epochs must be at least 1");
    if (!(cfg.validation_fraction >= 0.0 && cfg.validation_fraction < 1.0))
        throw UsageError("validation fraction must lie in [0, 1)");
    if (data.side != initial.input_side) throw DataError("dataset patch size does not match the model input");
    if (data.scheme.size() != initial.n_classes) throw DataError("dataset scheme does not match the model classes");

    // stratified split
    std::vector<std::vector<std::size_t>> by_class(initial.n_classes);
    for (std::size_t i = 0; i < data.count(); ++i) by_class[data.labels[i]].push_back(i);
    int populated = 0;
    for (const auto& c : by_class) {
        if (c.empty()) continue;
        ++populated;
        if (static_cast<int>(c.size()) < cfg.batch_size)
            throw UsageError("every class needs at least batch_size (" + std::to_string(cfg.batch_size) + ") samples");
    }
    if (populated < 2) throw UsageError("training needs at least two populated classes");
    Rng split_rng(derive_seed(cfg.seed, 0x5eedULL));
    std::vector<std::size_t> train_idx, val_idx;
    for (auto& c : by_class) {
        for (std::size_t i = c.size(); i > 1; --i) std::swap(c[i - 1], c[split_rng.below(i)]);
        const std::size_t nv = static_cast<std::size_t>(std::floor(c.size() * cfg.validation_fraction));
        val_idx.insert(val_idx.end(), c.begin(), c.begin() + nv);
        train_idx.insert(train_idx.end(), c.begin() + nv, c.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());

    const Engine<float> engine(initial.input_side, initial.n_classes);
    const std::size_t np = engine.param_count();
    CnnModel model = initial;
    model.history.clear();
    std::vector<float> velocity(np, 0.0f);
    std::vector<float> lr_scale(np, 1.0f);
    if (cfg.fine_tune) {
        const auto& last = engine.layers().back();
        std::fill(lr_scale.begin() + last.weight_offset, lr_scale.begin() + last.bias_offset + last.bias_count,
                  static_cast<float>(cfg.final_layer_lr_multiplier));
    }

    struct Chunk {
        Engine<float>::Work work;
        std::vector<float> grad;
        double loss = 0;
        int correct = 0;
        std::vector<std::uint8_t> patch;
    };
    std::vector<Chunk> chunks(kChunks);
    for (auto& c : chunks) {
        engine.prepare(c.work);
        c.grad.assign(np, 0.0f);
    }

    auto evaluate = [&](const std::vector<std::size_t>& idx, double& loss, double& acc) {
        Engine<float>::Work w;
        engine.prepare(w);
        double l = 0;
        std::size_t ok = 0;
        for (std::size_t i : idx) {
            load_input(data.patch(i), model.zero_centered, w.act[0]);
            engine.forward(model.params.data(), w);
            const auto p = engine.probabilities(w);
            l -= std::log(std::max(p[data.labels[i]], 1e-300));
            ok += static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) == data.labels[i];
        }
        loss = idx.empty() ? 0.0 : l / idx.size();
        acc = idx.empty() ? 0.0 : static_cast<double>(ok) / idx.size();
    };

    TrainResult result;
    result.model = model;
    evaluate(train_idx, result.initial.train_loss, result.initial.train_accuracy);
    if (val_idx.empty()) {
        result.initial.val_loss = result.initial.train_loss;
        result.initial.val_accuracy = result.initial.train_accuracy;
    } else {
        evaluate(val_idx, result.initial.val_loss, result.initial.val_accuracy);
    }
    double best_val = INFINITY;
    int since_best = 0;
    const int jobs = std::clamp(cfg.jobs, 1, kChunks);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> order = train_idx;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        std::vector<int> transforms(order.size(), 0);
        if (cfg.augment)
            for (int& t : transforms) t = static_cast<int>(rng.below(8));

        double epoch_loss = 0;
        std::size_t epoch_correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::size_t count = end - start;
            const float scale = 1.0f / static_cast<float>(count);
            auto run_chunk = [&](int ci) {
                Chunk& ch = chunks[ci];
                std::fill(ch.grad.begin(), ch.grad.end(), 0.0f);
                ch.loss = 0;
                ch.correct = 0;
                const std::size_t lo = start + count * ci / kChunks, hi = start + count * (ci + 1) / kChunks;
                for (std::size_t k = lo; k < hi; ++k) {
                    const std::size_t i = order[k];
                    transform_patch(data.patch(i), data.side, transforms[k], ch.patch);
                    load_input(std::span<const std::uint8_t>(ch.patch), model.zero_centered, ch.work.act[0]);
                    engine.forward(model.params.data(), ch.work);
                    const auto& z = ch.work.act.back();
                    ch.correct += static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()) == data.labels[i];
                    ch.loss += engine.backward(model.params.data(), ch.work, data.labels[i], ch.grad.data(), scale);
                }
            };
            if (jobs == 1) {
                for (int ci = 0; ci < kChunks; ++ci) run_chunk(ci);
            } else {
                for (int first = 0; first < kChunks; first += jobs) {
                    std::vector<std::thread> threads;
                    for (int ci = first; ci < std::min(kChunks, first + jobs); ++ci) threads.emplace_back(run_chunk, ci);
                    for (auto& t : threads) t.join();
                }
            }
            for (int ci = 1; ci < kChunks; ++ci)
                for (std::size_t k = 0; k < np; ++k) chunks[0].grad[k] += chunks[ci].grad[k];
            for (const auto& ch : chunks) {
                epoch_loss += ch.loss;
                epoch_correct += ch.correct;
            }
            const float lr = static_cast<float>(cfg.learning_rate), mu = static_cast<float>(cfg.momentum);
            const float wd = static_cast<float>(cfg.weight_decay);
            const auto& g = chunks[0].grad;
            for (std::size_t k = 0; k < np; ++k) {
                velocity[k] = mu * velocity[k] - lr * lr_scale[k] * (g[k] + wd * model.params[k]);
                model.params[k] += velocity[k];
            }
        }
        EpochStats st;
        st.epoch = epoch;
        st.train_loss = epoch_loss / order.size();
        st.train_accuracy = static_cast<double>(epoch_correct) / order.size();
        if (!std::isfinite(st.train_loss)) throw NumericError("training diverged at epoch " + std::to_string(epoch));
        if (val_idx.empty()) {
            st.val_loss = st.train_loss;
            st.val_accuracy = st.train_accuracy;
        } else {
            evaluate(val_idx, st.val_loss, st.val_accuracy);
        }
        if (!std::isfinite(st.val_loss)) throw NumericError("validation loss diverged at epoch " + std::to_string(epoch));
        model.history.push_back(st);
        if (cfg.on_epoch) cfg.on_epoch(st);
        if (st.val_loss < best_val) {
            best_val = st.val_loss;
            since_best = 0;
            result.model.params = model.params;
            result.best_epoch = epoch;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    result.model.history = model.history;
    return result;
}

std::pair<double, std::vector<double>> loss_and_gradient(const CnnModel& model, std::span<const std::uint8_t> gray,
                                                         int label) {
    check_model(model);
    Engine<double> engine(model.input_side, model.n_classes);
    if (gray.size() != static_cast<std::size_t>(engine.input_size())) throw DataError("patch size mismatch");
    if (label < 0 || label >= model.n_classes) throw DataError("label out of range");
    std::vector<double> p(model.params.begin(), model.params.end());
    Engine<double>::Work w;
    engine.prepare(w);
    load_input(gray, model.zero_centered, w.act[0]);
    engine.forward(p.data(), w);
    std::vector<double> grad(p.size(), 0.0);
    const double loss = engine.backward(p.data(), w, label, grad.data(), 1.0);
    return {loss, std::move(grad)};
}

GradientCheckResult gradient_check(const CnnModel& model, std::span<const std::uint8_t> gray, int label,
                                   std::uint64_t seed, int samples) {
    check_model(model);
    Engine<double> engine(model.input_side, model.n_classes);
    std::vector<double> p(model.params.begin(), model.params.end());
    Engine<double>::Work w;
    engine.prepare(w);
    load_input(gray, model.zero_centered, w.act[0]);
    engine.forward(p.data(), w);
    const auto base_sig = engine.signature(w);
    std::vector<double> grad(p.size(), 0.0);
    engine.backward(p.data(), w, label, grad.data(), 1.0);

    auto loss_at = [&](std::size_t k, double value, bool& same_kinks) {
        const double saved = p[k];
        p[k] = value;
        engine.forward(p.data(), w);
        same_kinks = engine.signature(w) == base_sig;
        const auto& z = w.act.back();
        const double m = *std::max_element(z.begin(), z.end());
        double s = 0;
        for (double v : z) s += std::exp(v - m);
        p[k] = saved;
        return std::log(s) + m - z[label];
    };

    struct Block {
        std::string name;
        std::size_t offset, count;
    };
    std::vector<Block> blocks;
    int index = 0;
    for (const auto& l : engine.layers()) {
        if (l.kind == LayerKind::pool) continue;
        ++index;
        blocks.push_back({layer_name(l, index) + ".weight", l.weight_offset, l.weight_count});
        blocks.push_back({layer_name(l, index) + ".bias", l.bias_offset, l.bias_count});
    }
    const int per_block = (std::max(samples, 200) + static_cast<int>(blocks.size()) - 1) / static_cast<int>(blocks.size());
    constexpr double kStep = 1e-4;
    GradientCheckResult out;
    Rng rng(seed);
    for (const auto& b : blocks) {
        double worst = 0;
        int done = 0;
        for (int attempt = 0; done < per_block && attempt < 50 * per_block; ++attempt) {
            const std::size_t k = b.offset + rng.below(b.count);
            bool same_plus = false, same_minus = false;
            const double fp = loss_at(k, p[k] + kStep, same_plus);
            const double fm = loss_at(k, p[k] - kStep, same_minus);
            if (!same_plus || !same_minus) {
                ++out.resampled;
                continue;
            }
            const double numeric = (fp - fm) / (2 * kStep);
            const double err = std::abs(numeric - grad[k]) / std::max({std::abs(numeric), std::abs(grad[k]), 1e-7});
            worst = std::max(worst, err);
            ++done;
            ++out.checked;
        }
        out.per_layer.emplace_back(b.name, worst);
        out.max_relative_error = std::max(out.max_relative_error, worst);
    }
    return out;
}

void save_model(const std::filesystem::path& path, const CnnModel& model) {
    check_model(model);
    if (model.scheme.size() > kSchemeBytes) throw DataError("scheme name too long for the model header");
    std::vector<std::uint8_t> out(kModelMagic, kModelMagic + 4);
    put_u16(out, kModelVersion);
    put_u16(out, model.zero_centered ? 1 : 0);
    put_u32(out, static_cast<std::uint32_t>(model.input_side));
    put_u32(out, static_cast<std::uint32_t>(model.n_classes));
    for (std::size_t i = 0; i < kSchemeBytes; ++i) out.push_back(i < model.scheme.size() ? model.scheme[i] : 0);
    put_u32(out, static_cast<std::uint32_t>(model.params.size()));
    for (float v : model.params) put_f32(out, v);
    put_u32(out, static_cast<std::uint32_t>(model.history.size()));
    for (const auto& h : model.history) {
        put_u32(out, static_cast<std::uint32_t>(h.epoch));
        for (double v : {h.train_loss, h.train_accuracy, h.val_loss, h.val_accuracy}) put_f32(out, static_cast<float>(v));
    }
    write_bytes(path, out);
}

CnnModel load_model(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    const std::span<const std::uint8_t> in(bytes);
    constexpr std::size_t header = 4 + 2 + 2 + 4 + 4 + kSchemeBytes + 4;
    if (in.size() < header || !std::equal(kModelMagic, kModelMagic + 4, in.begin()))
        throw DataError(path.string() + ": not a model file");
    if (get_u16(in, 4) != kModelVersion) throw DataError(path.string() + ": unsupported model version");
    CnnModel m;
    m.zero_centered = (get_u16(in, 6) & 1) != 0;
    m.input_side = static_cast<int>(get_u32(in, 8));
    m.n_classes = static_cast<int>(get_u32(in, 12));
    std::string name(reinterpret_cast<const char*>(in.data() + 16), kSchemeBytes);
    m.scheme = name.substr(0, name.find('\0'));
    const std::size_t n = get_u32(in, 16 + kSchemeBytes);
    std::size_t pos = header;
    try {
        if (n != parameter_count(m.input_side, m.n_classes))
            throw DataError(path.string() + ": parameter count does not match the topology");
    } catch (const UsageError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    if (in.size() < pos + 4 * n + 4) throw DataError(path.string() + ": truncated model file");
    m.params.resize(n);
    for (std::size_t i = 0; i < n; ++i, pos += 4) m.params[i] = get_f32(in, pos);
    const std::size_t epochs = get_u32(in, pos);
    pos += 4;
    if (in.size() != pos + 20 * epochs) throw DataError(path.string() + ": malformed training history");
    for (std::size_t e = 0; e < epochs; ++e, pos += 20) {
        EpochStats h;
        h.epoch = static_cast<int>(get_u32(in, pos));
        h.train_loss = get_f32(in, pos + 4);
        h.train_accuracy = get_f32(in, pos + 8);
        h.val_loss = get_f32(in, pos + 12);
        h.val_accuracy = get_f32(in, pos + 16);
        m.history.push_back(h);
    }
    return m;
}

} // namespace insarforge::cnn
