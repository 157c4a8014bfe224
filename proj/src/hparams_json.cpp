#include "flexclip/hparams_json.hpp"

#include <algorithm>
#include <cstring>

namespace flexclip {

using nlohmann::json;

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* a) { return key == a; });
    if (!known) throw ConfigError(section + ": unknown key '" + key + "'");
  }
}

json to_json(const generation::GenHyperParams& hp) {
  return json{{"latent_dim", hp.latent_dim},
              {"encoder_widths", hp.encoder_widths},
              {"generator_hidden", hp.generator_hidden},
              {"critic_hidden", hp.critic_hidden},
              {"lambda_gp", hp.lambda_gp},
              {"critic_steps", hp.critic_steps},
              {"lr", hp.lr},
              {"batch", hp.batch},
              {"epochs", hp.epochs},
              {"seed", hp.seed},
              {"leaky_slope", hp.leaky_slope},
              {"logvar_clamp", hp.logvar_clamp},
              {"use_vae", hp.use_vae},
              {"parallel_modalities", hp.parallel_modalities}};
}

json to_json(const projection::ProjHyperParams& hp) {
  return json{{"alpha", hp.alpha},
              {"beta", hp.beta},
              {"gamma", hp.gamma},
              {"tau", hp.tau},
              {"lr", hp.lr},
              {"batch", hp.batch},
              {"epochs", hp.epochs},
              {"seed", hp.seed},
              {"projector_hidden", hp.projector_hidden},
              {"gate_hidden", hp.gate_hidden},
              {"use_gate", hp.use_gate},
              {"contrastive_exclude_self", hp.contrastive_exclude_self}};
}

generation::GenHyperParams gen_hparams_from_json(const json& j, generation::GenHyperParams hp) {
  const std::string s = "generation";
  reject_unknown_keys(j,
                      {"latent_dim", "encoder_widths", "generator_hidden", "critic_hidden",
                       "lambda_gp", "critic_steps", "lr", "batch", "epochs", "seed", "leaky_slope",
                       "logvar_clamp", "use_vae", "parallel_modalities"},
                      s);
  read_key(j, "latent_dim", hp.latent_dim, s);
  read_key(j, "encoder_widths", hp.encoder_widths, s);
  read_key(j, "generator_hidden", hp.generator_hidden, s);
  read_key(j, "critic_hidden", hp.critic_hidden, s);
  read_key(j, "lambda_gp", hp.lambda_gp, s);
  read_key(j, "critic_steps", hp.critic_steps, s);
  read_key(j, "lr", hp.lr, s);
  read_key(j, "batch", hp.batch, s);
  read_key(j, "epochs", hp.epochs, s);
  read_key(j, "seed", hp.seed, s);
  read_key(j, "leaky_slope", hp.leaky_slope, s);
  read_key(j, "logvar_clamp", hp.logvar_clamp, s);
  read_key(j, "use_vae", hp.use_vae, s);
  read_key(j, "parallel_modalities", hp.parallel_modalities, s);
  return hp;
}

projection::ProjHyperParams proj_hparams_from_json(const json& j, projection::ProjHyperParams hp) {
  const std::string s = "projection";
  reject_unknown_keys(j,
                      {"alpha", "beta", "gamma", "tau", "lr", "batch", "epochs", "seed",
                       "projector_hidden", "gate_hidden", "use_gate", "contrastive_exclude_self"},
                      s);
  read_key(j, "alpha", hp.alpha, s);
  read_key(j, "beta", hp.beta, s);
  read_key(j, "gamma", hp.gamma, s);
  read_key(j, "tau", hp.tau, s);
  read_key(j, "lr", hp.lr, s);
  read_key(j, "batch", hp.batch, s);
  read_key(j, "epochs", hp.epochs, s);
  read_key(j, "seed", hp.seed, s);
  read_key(j, "projector_hidden", hp.projector_hidden, s);
  read_key(j, "gate_hidden", hp.gate_hidden, s);
  read_key(j, "use_gate", hp.use_gate, s);
  read_key(j, "contrastive_exclude_self", hp.contrastive_exclude_self, s);
  return hp;
}

}  // namespace flexclip
