#include "dcvit/config_io.hpp"

#include "dcvit/error.hpp"

namespace dcvit {

namespace {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void read_pair(const nlohmann::json& j, const char* key, Pair& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) throw ConfigError(std::string("config: ") + key + " must be [a, b]");
  out = {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
}

void read_dpair(const nlohmann::json& j, const char* key, std::pair<double, double>& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) throw ConfigError(std::string("config: ") + key + " must be [a, b]");
  out = {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace

std::string head_mode_name(HeadMode mode) {
  return mode == HeadMode::kRegression ? "regression" : "classification";
}

HeadMode parse_head_mode(const std::string& name) {
  if (name == "regression") return HeadMode::kRegression;
  if (name == "classification") return HeadMode::kClassification;
  throw ConfigError("unknown head_mode '" + name + "'");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{
      {"channels", c.channels},
      {"timesteps", c.timesteps},
      {"temporal_filters", c.temporal_filters},
      {"temporal_kernel", {c.temporal_kernel.first, c.temporal_kernel.second}},
      {"temporal_stride", {c.temporal_stride.first, c.temporal_stride.second}},
      {"temporal_pad", {c.temporal_pad.first, c.temporal_pad.second}},
      {"ds_block", c.ds_block},
      {"ds_depthwise_kernel", {c.ds_depthwise_kernel.first, c.ds_depthwise_kernel.second}},
      {"ds_pointwise_out", c.ds_pointwise_out},
      {"channel_kernel", {c.channel_kernel.first, c.channel_kernel.second}},
      {"channel_stride", {c.channel_stride.first, c.channel_stride.second}},
      {"channel_pad", {c.channel_pad.first, c.channel_pad.second}},
      {"token_dim", c.token_dim},
      {"hidden_dim", c.hidden_dim},
      {"encoder_depth", c.encoder_depth},
      {"heads", c.heads},
      {"mlp_dim", c.mlp_dim},
      {"head_hidden", c.head_hidden},
      {"dropout_p", c.dropout_p},
      {"norm_eps", c.norm_eps},
      {"head_mode", head_mode_name(c.head_mode)},
      {"num_classes", c.num_classes},
      {"output_offset", {c.output_offset.first, c.output_offset.second}},
      {"output_scale", {c.output_scale.first, c.output_scale.second}},
  };
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  read_opt(j, "channels", c.channels);
  read_opt(j, "timesteps", c.timesteps);
  read_opt(j, "temporal_filters", c.temporal_filters);
  read_pair(j, "temporal_kernel", c.temporal_kernel);
  read_pair(j, "temporal_stride", c.temporal_stride);
  read_pair(j, "temporal_pad", c.temporal_pad);
  read_opt(j, "ds_block", c.ds_block);
  read_pair(j, "ds_depthwise_kernel", c.ds_depthwise_kernel);
  read_opt(j, "ds_pointwise_out", c.ds_pointwise_out);
  read_pair(j, "channel_kernel", c.channel_kernel);
  read_pair(j, "channel_stride", c.channel_stride);
  read_pair(j, "channel_pad", c.channel_pad);
  read_opt(j, "token_dim", c.token_dim);
  read_opt(j, "hidden_dim", c.hidden_dim);
  read_opt(j, "encoder_depth", c.encoder_depth);
  read_opt(j, "heads", c.heads);
  read_opt(j, "mlp_dim", c.mlp_dim);
  read_opt(j, "head_hidden", c.head_hidden);
  read_opt(j, "dropout_p", c.dropout_p);
  read_opt(j, "norm_eps", c.norm_eps);
  if (j.contains("head_mode")) c.head_mode = parse_head_mode(j.at("head_mode").get<std::string>());
  read_opt(j, "num_classes", c.num_classes);
  read_dpair(j, "output_offset", c.output_offset);
  read_dpair(j, "output_scale", c.output_scale);
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{
      {"screen_w", c.screen_w},           {"screen_h", c.screen_h},
      {"grid_cols", c.grid_cols},         {"grid_rows", c.grid_rows},
      {"margin_x", c.margin_x},           {"margin_y", c.margin_y},
      {"center_weight", c.center_weight}, {"jitter_radius_px", c.jitter_radius_px},
      {"n_samples", c.n_samples},         {"n_participants", c.n_participants},
      {"channels", c.channels},           {"timesteps", c.timesteps},
      {"noise_std", c.noise_std},         {"signal_gain", c.signal_gain},
      {"seed", c.seed},
  };
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  read_opt(j, "screen_w", c.screen_w);
  read_opt(j, "screen_h", c.screen_h);
  read_opt(j, "grid_cols", c.grid_cols);
  read_opt(j, "grid_rows", c.grid_rows);
  read_opt(j, "margin_x", c.margin_x);
  read_opt(j, "margin_y", c.margin_y);
  read_opt(j, "center_weight", c.center_weight);
  read_opt(j, "jitter_radius_px", c.jitter_radius_px);
  read_opt(j, "n_samples", c.n_samples);
  read_opt(j, "n_participants", c.n_participants);
  read_opt(j, "channels", c.channels);
  read_opt(j, "timesteps", c.timesteps);
  read_opt(j, "noise_std", c.noise_std);
  read_opt(j, "signal_gain", c.signal_gain);
  read_opt(j, "seed", c.seed);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"eval_batch_size", c.eval_batch_size},
      {"learning_rate", c.learning_rate},
      {"weight_decay", c.weight_decay},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"adam_eps", c.adam_eps},
      {"seed", c.seed},
      {"trials", c.trials},
      {"same_seed_trials", c.same_seed_trials},
      {"px_per_mm", c.px_per_mm},
      {"loss", c.loss == LossKind::kMse ? "mse" : "cross_entropy"},
  };
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "eval_batch_size", c.eval_batch_size);
  read_opt(j, "learning_rate", c.learning_rate);
  read_opt(j, "weight_decay", c.weight_decay);
  read_opt(j, "beta1", c.beta1);
  read_opt(j, "beta2", c.beta2);
  read_opt(j, "adam_eps", c.adam_eps);
  read_opt(j, "seed", c.seed);
  read_opt(j, "trials", c.trials);
  read_opt(j, "same_seed_trials", c.same_seed_trials);
  read_opt(j, "px_per_mm", c.px_per_mm);
  if (j.contains("loss")) {
    const auto name = j.at("loss").get<std::string>();
    if (name == "mse") {
      c.loss = LossKind::kMse;
    } else if (name == "cross_entropy") {
      c.loss = LossKind::kCrossEntropy;
    } else {
      throw ConfigError("unknown loss '" + name + "'");
    }
  }
}

}  // namespace dcvit
