// SPDX-License-Identifier: Apache-2.0
#include "stip/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "stip/common.hpp"

namespace stip::harness {

namespace {

// Field table keeps parse/serialize/validate in one place.
template <typename F>
void for_each_field(PipelineConfig& c, F&& f) {
    f("min_count", c.min_count);
    f("span_only", c.span_only);
    f("patterns_path", c.patterns_path);
    f("embed_dim", c.embed_dim);
    f("seq_tokens", c.seq_tokens);
    f("repeat_factor", c.repeat_factor);
    f("cbow_window", c.cbow_window);
    f("cbow_negatives", c.cbow_negatives);
    f("cbow_epochs", c.cbow_epochs);
    f("cbow_lr", c.cbow_lr);
    f("pe_after_repeat", c.pe_after_repeat);
    f("repeat_mode", c.repeat_mode);
    f("fusion_heads", c.fusion_heads);
    f("fusion_groups", c.fusion_groups);
    f("memory_slots", c.memory_slots);
    f("fusion_stages", c.fusion_stages);
    f("mb_expansion", c.mb_expansion);
    f("student_hidden", c.student_hidden);
    f("psa_groups", c.psa_groups);
    f("train_lr", c.train_lr);
    f("train_batch", c.train_batch);
    f("train_epochs", c.train_epochs);
    f("synthesis_space", c.synthesis_space);
    f("logit_sigma", c.logit_sigma);
    f("adversarial_weight", c.adversarial_weight);
    f("noise_prior_from_embedding", c.noise_prior_from_embedding);
    f("noise_mu", c.noise_mu);
    f("noise_sigma", c.noise_sigma);
    f("synth_eta", c.synth_eta);
    f("synth_steps", c.synth_steps);
    f("kd_temperature", c.kd_temperature);
    f("kd_alpha", c.kd_alpha);
    f("distill_batch", c.distill_batch);
    f("distill_steps", c.distill_steps);
    f("refresh_every", c.refresh_every);
    f("distill_lr", c.distill_lr);
    f("distill_momentum", c.distill_momentum);
    f("transfer_epochs", c.transfer_epochs);
    f("repeats", c.repeats);
    f("split_ratio", c.split_ratio);
    f("precision", c.precision);
}

}  // namespace

void PipelineConfig::apply_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    std::set<std::string> known;
    for_each_field(*this, [&](const char* name, auto& field) {
        known.insert(name);
        if (j.contains(name)) j.at(name).get_to(field);
    });
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ConfigError("unknown config key: " + key);
    validate();
}

PipelineConfig PipelineConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    PipelineConfig c;
    c.apply_json(buf.str());
    return c;
}

std::string PipelineConfig::to_json() const {
    nlohmann::json j;
    for_each_field(const_cast<PipelineConfig&>(*this),
                   [&](const char* name, auto& field) { j[name] = field; });
    return j.dump(2);
}

void PipelineConfig::validate() const {
    if (embed_dim < 2 || embed_dim % 2 != 0) throw ConfigError("embed_dim must be even and >= 2");
    if (seq_tokens < 1) throw ConfigError("seq_tokens must be >= 1");
    if (repeat_factor < 1) throw ConfigError("repeat_factor must be >= 1");
    if (cbow_window < 1) throw ConfigError("cbow_window must be >= 1");
    if (cbow_negatives < 1) throw ConfigError("cbow_negatives must be >= 1");
    if (min_count < 1) throw ConfigError("min_count must be >= 1");
    if (repeat_mode != "tile" && repeat_mode != "element")
        throw ConfigError("repeat_mode must be 'tile' or 'element'");
    if (embed_dim % fusion_heads != 0) throw ConfigError("embed_dim must divide by fusion_heads");
    if (embed_dim % fusion_groups != 0) throw ConfigError("embed_dim must divide by fusion_groups");
    if (fusion_heads % fusion_groups != 0)
        throw ConfigError("fusion_groups must divide fusion_heads");
    if (memory_slots < 1) throw ConfigError("memory_slots must be >= 1");
    if (fusion_stages < 1) throw ConfigError("fusion_stages must be >= 1");
    if (psa_groups < 1 || psa_groups > 4) throw ConfigError("psa_groups must be in 1..4");
    if (kd_alpha < 0 || kd_alpha > 1) throw ConfigError("kd_alpha must be in [0,1]");
    if (kd_temperature <= 0) throw ConfigError("kd_temperature must be > 0");
    if (noise_sigma < 0) throw ConfigError("noise_sigma must be >= 0");
    if (split_ratio <= 0 || split_ratio >= 1) throw ConfigError("split_ratio must be in (0,1)");
    if (precision != "f32" && precision != "f64")
        throw ConfigError("precision must be 'f32' or 'f64'");
    if (synthesis_space != "token-mixture" && synthesis_space != "direct")
        throw ConfigError("synthesis_space must be 'token-mixture' or 'direct'");
}

}  // namespace stip::harness
