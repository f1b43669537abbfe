#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "pageopt/rng.hpp"

namespace pageopt::nn {

using Vec = std::vector<double>;

// Row-major 64-bit float buffer. Everything in this project is small enough
// that doubles plus exact gradient checks beat a fancier representation.
struct Tensor {
    std::vector<std::size_t> shape;
    Vec data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape_in);
    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
    void fill(double value);
};

// One named parameter with its gradient and Adam state.
struct Param {
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
    std::int64_t step = 0;
};

// Insertion-ordered parameter registry; the checkpoint writes buffers in
// exactly this order.
class ParamStore {
public:
    Param& create(const std::string& name, std::vector<std::size_t> shape);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    const std::vector<std::string>& names() const { return order_; }
    void zero_grad();
    std::size_t total_size() const;

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Param> params_;
};

// Initializers. Dense and LSTM weights use uniform(-sqrt(1/fan_in), +...);
// embeddings use normal(0, 0.1).
void init_uniform_fan_in(Tensor& t, std::size_t fan_in, RngStream& rng);
void init_normal(Tensor& t, double stddev, RngStream& rng);

// y = x W + b, W shape [in, out]. All backward functions accumulate (+=) into
// the gradient outputs, so one zero_grad per step is enough.
void dense_forward(const Vec& x, const Tensor& W, const Vec& b, Vec& y);
void dense_backward(const Vec& x, const Tensor& W, const Vec& dy, Vec* dx, Tensor* dW, Vec* db);

void relu_forward(const Vec& x, Vec& y);
void relu_backward(const Vec& x, const Vec& dy, Vec& dx);
void tanh_forward(const Vec& x, Vec& y);
// Takes the forward output, not the input.
void tanh_backward(const Vec& y, const Vec& dy, Vec& dx);

// Standard LSTM cell. Wih is [input, 4H], Whh is [H, 4H], b is 4H, gate order
// (input, forget, candidate, output).
struct LstmCache {
    Vec x, h_prev, c_prev;
    Vec gate_i, gate_f, gate_g, gate_o;
    Vec c, tanh_c;
};

void lstm_forward(const Vec& x, const Vec& h_prev, const Vec& c_prev, const Tensor& Wih,
                  const Tensor& Whh, const Vec& b, Vec& h_out, Vec& c_out, LstmCache* cache);
void lstm_backward(const LstmCache& cache, const Tensor& Wih, const Tensor& Whh, const Vec& dh,
                   const Vec& dc, Tensor& dWih, Tensor& dWhh, Vec& db, Vec& dx, Vec& dh_prev,
                   Vec& dc_prev);

// Row lookup; duplicate ids accumulate gradient additively.
void embedding_forward(const Tensor& table, int id, Vec& row);
void embedding_backward(Tensor& dtable, int id, const Vec& drow);

double sigmoid(double x);
double softplus(double x);

// Numerically stable weighted binary cross-entropy on a logit; target may be
// a soft label in [0, 1]. Gradient accumulates into *dlogit when non-null.
double binary_ce(double logit, double target, double weight, double* dlogit);

// Separate weights for the positive and negative parts of the loss; with
// pos_weight == neg_weight this equals binary_ce. Used for inverse-propensity
// weighting, where only the engagement term is reweighted.
double weighted_binary_ce(double logit, double target, double pos_weight, double neg_weight,
                          double* dlogit);

void softmax(const Vec& logits, Vec& probs);
double softmax_ce(const Vec& logits, int target, double weight, Vec* dlogits);

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over every parameter in the store.
void adam_step(ParamStore& store, const AdamConfig& cfg);

enum class WeightMode { fixed, learned };

struct ObjectiveWeights {
    WeightMode mode = WeightMode::fixed;
    Vec fixed_weights;  // used in fixed mode, one per objective
};

struct AggregateResult {
    double loss = 0.0;
    // Factor each objective's gradient gets scaled by (w_i or exp(-s_i)).
    Vec multipliers;
};

// Fixed mode: sum w_i L_i. Learned mode: sum exp(-s_i) L_i + s_i, with the
// gradient wrt each s_i accumulated into log_vars->grad.
AggregateResult aggregate_loss(const Vec& losses, const ObjectiveWeights& weights,
                               Param* log_vars);

// Checkpoint: one JSON header line (names, shapes, hyperparameters, seed)
// followed by the little-endian float64 buffers in header order.
void save_checkpoint(const ParamStore& store, const nlohmann::json& hyperparameters,
                     std::uint64_t seed, const std::string& path);
struct Checkpoint {
    ParamStore store;
    nlohmann::json hyperparameters;
    std::uint64_t seed = 0;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pageopt::nn
