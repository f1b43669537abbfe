#include "pageopt/neuro.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "pageopt/errors.hpp"

namespace pageopt::nn {

Tensor::Tensor(std::vector<std::size_t> shape_in) : shape(std::move(shape_in)) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    data.assign(n, 0.0);
}

void Tensor::fill(double value) {
    for (double& x : data) x = value;
}

Param& ParamStore::create(const std::string& name, std::vector<std::size_t> shape) {
    if (params_.count(name)) throw DataError("param already exists: " + name);
    Param p;
    p.value = Tensor(shape);
    p.grad = Tensor(shape);
    p.adam_m = Tensor(shape);
    p.adam_v = Tensor(std::move(shape));
    order_.push_back(name);
    return params_.emplace(name, std::move(p)).first->second;
}

Param& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw DataError("unknown param: " + name);
    return it->second;
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw DataError("unknown param: " + name);
    return it->second;
}

void ParamStore::zero_grad() {
    for (auto& [name, p] : params_) p.grad.fill(0.0);
}

std::size_t ParamStore::total_size() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.value.size();
    return n;
}

void init_uniform_fan_in(Tensor& t, std::size_t fan_in, RngStream& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (double& x : t.data) x = rng.uniform(-bound, bound);
}

void init_normal(Tensor& t, double stddev, RngStream& rng) {
    for (double& x : t.data) x = stddev * rng.normal();
}

void dense_forward(const Vec& x, const Tensor& W, const Vec& b, Vec& y) {
    const std::size_t in = W.rows();
    const std::size_t out = W.cols();
    if (x.size() != in || b.size() != out)
        throw DataError("dense_forward: shape mismatch");
    y.assign(out, 0.0);
    for (std::size_t i = 0; i < in; ++i) {
        const double xi = x[i];
        const double* w = &W.data[i * out];
        for (std::size_t j = 0; j < out; ++j) y[j] += xi * w[j];
    }
    for (std::size_t j = 0; j < out; ++j) y[j] += b[j];
}

void dense_backward(const Vec& x, const Tensor& W, const Vec& dy, Vec* dx, Tensor* dW, Vec* db) {
    const std::size_t in = W.rows();
    const std::size_t out = W.cols();
    if (x.size() != in || dy.size() != out)
        throw DataError("dense_backward: shape mismatch");
    if (dx != nullptr) {
        if (dx->size() != in) dx->assign(in, 0.0);
        for (std::size_t i = 0; i < in; ++i) {
            const double* w = &W.data[i * out];
            double acc = 0.0;
            for (std::size_t j = 0; j < out; ++j) acc += w[j] * dy[j];
            (*dx)[i] += acc;
        }
    }
    if (dW != nullptr) {
        for (std::size_t i = 0; i < in; ++i) {
            const double xi = x[i];
            double* g = &dW->data[i * out];
            for (std::size_t j = 0; j < out; ++j) g[j] += xi * dy[j];
        }
    }
    if (db != nullptr) {
        for (std::size_t j = 0; j < out; ++j) (*db)[j] += dy[j];
    }
}

void relu_forward(const Vec& x, Vec& y) {
    y.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const Vec& x, const Vec& dy, Vec& dx) {
    if (dx.size() != x.size()) dx.assign(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += x[i] > 0.0 ? dy[i] : 0.0;
}

void tanh_forward(const Vec& x, Vec& y) {
    y.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
}

void tanh_backward(const Vec& y, const Vec& dy, Vec& dx) {
    if (dx.size() != y.size()) dx.assign(y.size(), 0.0);
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] += (1.0 - y[i] * y[i]) * dy[i];
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double softplus(double x) {
    // log(1 + e^x) without overflow.
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

void lstm_forward(const Vec& x, const Vec& h_prev, const Vec& c_prev, const Tensor& Wih,
                  const Tensor& Whh, const Vec& b, Vec& h_out, Vec& c_out, LstmCache* cache) {
    const std::size_t hidden = Whh.rows();
    if (Wih.cols() != 4 * hidden || Whh.cols() != 4 * hidden || b.size() != 4 * hidden ||
        h_prev.size() != hidden || c_prev.size() != hidden || x.size() != Wih.rows())
        throw DataError("lstm_forward: shape mismatch");

    Vec z(4 * hidden, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        const double* w = &Wih.data[i * 4 * hidden];
        for (std::size_t j = 0; j < 4 * hidden; ++j) z[j] += xi * w[j];
    }
    for (std::size_t i = 0; i < hidden; ++i) {
        const double hi = h_prev[i];
        const double* w = &Whh.data[i * 4 * hidden];
        for (std::size_t j = 0; j < 4 * hidden; ++j) z[j] += hi * w[j];
    }
    for (std::size_t j = 0; j < 4 * hidden; ++j) z[j] += b[j];

    Vec gi(hidden), gf(hidden), gg(hidden), go(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
        gi[j] = sigmoid(z[j]);
        gf[j] = sigmoid(z[hidden + j]);
        gg[j] = std::tanh(z[2 * hidden + j]);
        go[j] = sigmoid(z[3 * hidden + j]);
    }
    c_out.resize(hidden);
    h_out.resize(hidden);
    Vec tanh_c(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
        c_out[j] = gf[j] * c_prev[j] + gi[j] * gg[j];
        tanh_c[j] = std::tanh(c_out[j]);
        h_out[j] = go[j] * tanh_c[j];
    }
    if (cache != nullptr) {
        cache->x = x;
        cache->h_prev = h_prev;
        cache->c_prev = c_prev;
        cache->gate_i = std::move(gi);
        cache->gate_f = std::move(gf);
        cache->gate_g = std::move(gg);
        cache->gate_o = std::move(go);
        cache->c = c_out;
        cache->tanh_c = std::move(tanh_c);
    }
}

void lstm_backward(const LstmCache& cache, const Tensor& Wih, const Tensor& Whh, const Vec& dh,
                   const Vec& dc, Tensor& dWih, Tensor& dWhh, Vec& db, Vec& dx, Vec& dh_prev,
                   Vec& dc_prev) {
    const std::size_t hidden = Whh.rows();
    Vec dz(4 * hidden);
    if (dx.size() != cache.x.size()) dx.assign(cache.x.size(), 0.0);
    if (dh_prev.size() != hidden) dh_prev.assign(hidden, 0.0);
    if (dc_prev.size() != hidden) dc_prev.assign(hidden, 0.0);

    for (std::size_t j = 0; j < hidden; ++j) {
        const double dho = dh[j];
        const double go = cache.gate_o[j];
        const double tc = cache.tanh_c[j];
        const double dcj = dc[j] + dho * go * (1.0 - tc * tc);
        const double gi = cache.gate_i[j];
        const double gf = cache.gate_f[j];
        const double gg = cache.gate_g[j];
        dz[j] = dcj * gg * gi * (1.0 - gi);                         // input gate
        dz[hidden + j] = dcj * cache.c_prev[j] * gf * (1.0 - gf);   // forget gate
        dz[2 * hidden + j] = dcj * gi * (1.0 - gg * gg);            // candidate
        dz[3 * hidden + j] = dho * tc * go * (1.0 - go);            // output gate
        dc_prev[j] += dcj * gf;
    }

    for (std::size_t i = 0; i < cache.x.size(); ++i) {
        const double xi = cache.x[i];
        const double* w = &Wih.data[i * 4 * hidden];
        double* g = &dWih.data[i * 4 * hidden];
        double acc = 0.0;
        for (std::size_t j = 0; j < 4 * hidden; ++j) {
            acc += w[j] * dz[j];
            g[j] += xi * dz[j];
        }
        dx[i] += acc;
    }
    for (std::size_t i = 0; i < hidden; ++i) {
        const double hi = cache.h_prev[i];
        const double* w = &Whh.data[i * 4 * hidden];
        double* g = &dWhh.data[i * 4 * hidden];
        double acc = 0.0;
        for (std::size_t j = 0; j < 4 * hidden; ++j) {
            acc += w[j] * dz[j];
            g[j] += hi * dz[j];
        }
        dh_prev[i] += acc;
    }
    for (std::size_t j = 0; j < 4 * hidden; ++j) db[j] += dz[j];
}

void embedding_forward(const Tensor& table, int id, Vec& row) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows())
        throw DataError("embedding: id " + std::to_string(id) + " out of range");
    const std::size_t dim = table.cols();
    row.assign(table.data.begin() + id * dim, table.data.begin() + (id + 1) * dim);
}

void embedding_backward(Tensor& dtable, int id, const Vec& drow) {
    if (id < 0 || static_cast<std::size_t>(id) >= dtable.rows())
        throw DataError("embedding: id " + std::to_string(id) + " out of range");
    const std::size_t dim = dtable.cols();
    for (std::size_t j = 0; j < dim; ++j) dtable.data[id * dim + j] += drow[j];
}

double binary_ce(double logit, double target, double weight, double* dlogit) {
    return weighted_binary_ce(logit, target, weight, weight, dlogit);
}

double weighted_binary_ce(double logit, double target, double pos_weight, double neg_weight,
                          double* dlogit) {
    // loss = w+ * y * softplus(-z) + w- * (1 - y) * softplus(z)
    const double loss = pos_weight * target * softplus(-logit) +
                        neg_weight * (1.0 - target) * softplus(logit);
    if (dlogit != nullptr) {
        const double s = sigmoid(logit);
        *dlogit += pos_weight * target * (s - 1.0) + neg_weight * (1.0 - target) * s;
    }
    return loss;
}

void softmax(const Vec& logits, Vec& probs) {
    probs.resize(logits.size());
    double max = logits.empty() ? 0.0 : logits[0];
    for (double z : logits) max = std::max(max, z);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - max);
        sum += probs[i];
    }
    for (double& p : probs) p /= sum;
}

double softmax_ce(const Vec& logits, int target, double weight, Vec* dlogits) {
    if (target < 0 || static_cast<std::size_t>(target) >= logits.size())
        throw DataError("softmax_ce: target out of range");
    double max = logits[0];
    for (double z : logits) max = std::max(max, z);
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - max);
    const double log_sum = max + std::log(sum);
    const double loss = weight * (log_sum - logits[static_cast<std::size_t>(target)]);
    if (dlogits != nullptr) {
        if (dlogits->size() != logits.size()) dlogits->assign(logits.size(), 0.0);
        for (std::size_t i = 0; i < logits.size(); ++i) {
            double p = std::exp(logits[i] - log_sum);
            (*dlogits)[i] += weight * (p - (static_cast<int>(i) == target ? 1.0 : 0.0));
        }
    }
    return loss;
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
    for (const std::string& name : store.names()) {
        Param& p = store.at(name);
        p.step += 1;
        const double t = static_cast<double>(p.step);
        const double bc1 = 1.0 - std::pow(cfg.beta1, t);
        const double bc2 = 1.0 - std::pow(cfg.beta2, t);
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad.data[i];
            p.adam_m.data[i] = cfg.beta1 * p.adam_m.data[i] + (1.0 - cfg.beta1) * g;
            p.adam_v.data[i] = cfg.beta2 * p.adam_v.data[i] + (1.0 - cfg.beta2) * g * g;
            const double m_hat = p.adam_m.data[i] / bc1;
            const double v_hat = p.adam_v.data[i] / bc2;
            p.value.data[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }
}

AggregateResult aggregate_loss(const Vec& losses, const ObjectiveWeights& weights,
                               Param* log_vars) {
    if (losses.empty()) throw DataError("aggregate_loss: need at least one objective");
    AggregateResult result;
    result.multipliers.resize(losses.size());
    if (weights.mode == WeightMode::fixed) {
        if (weights.fixed_weights.size() != losses.size())
            throw DataError("aggregate_loss: weight count mismatch");
        for (std::size_t i = 0; i < losses.size(); ++i) {
            const double w = weights.fixed_weights[i];
            if (w < 0.0) throw DataError("aggregate_loss: fixed weights must be >= 0");
            result.multipliers[i] = w;
            result.loss += w * losses[i];
        }
        return result;
    }
    if (log_vars == nullptr || log_vars->value.size() != losses.size())
        throw DataError("aggregate_loss: learned mode needs log-variance params");
    for (std::size_t i = 0; i < losses.size(); ++i) {
        const double s = log_vars->value.data[i];
        const double w = std::exp(-s);
        result.multipliers[i] = w;
        result.loss += w * losses[i] + s;
        log_vars->grad.data[i] += -w * losses[i] + 1.0;
    }
    return result;
}

void save_checkpoint(const ParamStore& store, const nlohmann::json& hyperparameters,
                     std::uint64_t seed, const std::string& path) {
    nlohmann::json header;
    header["format"] = "pageopt-checkpoint-v1";
    header["seed"] = seed;
    header["hyperparameters"] = hyperparameters;
    nlohmann::json params = nlohmann::json::array();
    for (const std::string& name : store.names()) {
        params.push_back({{"name", name}, {"shape", store.at(name).value.shape}});
    }
    header["params"] = params;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingInputError("cannot open checkpoint for writing: " + path);
    out << header.dump() << "\n";
    for (const std::string& name : store.names()) {
        const Tensor& t = store.at(name).value;
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInputError("cannot open checkpoint: " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) throw SchemaError("checkpoint: missing header: " + path);
    nlohmann::json header = nlohmann::json::parse(header_line);
    if (header.at("format").get<std::string>() != "pageopt-checkpoint-v1")
        throw SchemaError("checkpoint: unknown format in " + path);
    Checkpoint ckpt;
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.hyperparameters = header.at("hyperparameters");
    for (const auto& entry : header.at("params")) {
        const std::string name = entry.at("name").get<std::string>();
        Param& p = ckpt.store.create(name, entry.at("shape").get<std::vector<std::size_t>>());
        in.read(reinterpret_cast<char*>(p.value.data.data()),
                static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
        if (!in) throw SchemaError("checkpoint: truncated buffer for " + name + " in " + path);
    }
    return ckpt;
}

}  // namespace pageopt::nn
