#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace goatlab {

enum class Backbone { RobertaLarge, VitBase, Llama2_7B };

Backbone backbone_from_string(const std::string& name);
const char* to_string(Backbone backbone);

// Backbone shape parameters feeding the closed-form parameter and FLOPs
// counts. d = r/e is derived.
struct BackboneSpec {
  std::string name;
  std::size_t hidden = 0;    // H, model dimension
  std::size_t layers = 0;    // L
  std::size_t vocab = 0;     // V (0 when the backbone has no vocabulary term)
  std::size_t rank = 0;      // r, total adapter rank
  std::size_t experts = 0;   // e
  std::size_t active = 0;    // k
  std::size_t patch = 0;     // P (ViT only)
  std::size_t channels = 0;  // C (ViT only)
  std::size_t seq_len = 0;   // s (FLOPs only)
  std::size_t batch = 0;     // B (FLOPs only)

  std::size_t expert_rank() const;  // d = r/e
};

// Published configuration for each backbone (8 experts, 2 active).
BackboneSpec default_backbone(Backbone backbone);

enum class CostMethod {
  FullFt,
  FullFtMoe,
  Lora,       // also PiSSA/MiLoRA/rsLoRA/LoRA-Dash/KaSA, which share the count
  LoraRank16, // ViT only
  LoraRank32, // ViT only
  Dora,
  Neat,       // LLaMA only
  MoeLora,    // MoLoRA and GOAT share the count
  HydraLora,
  AdaMole,
};

CostMethod cost_method_from_string(const std::string& name);
const char* to_string(CostMethod method);

struct CostReport {
  double total_params = 0.0;      // model total including frozen weights
  double trainable_params = 0.0;  // method closed form
  double proportion = 0.0;        // percent of dense fine-tuning, truncated at
                                  // the reference table's printed precision
  int proportion_decimals = 2;
  double flops = 0.0;  // forward FLOPs; 0 when the method has no FLOPs model
};

// Evaluates the closed-form trainable count and its percentage of the dense
// baseline for one method/backbone pair. Throws std::domain_error for pairs
// the reference table does not enumerate.
CostReport param_count(const BackboneSpec& spec, CostMethod method);

// Forward FLOPs (each multiply-accumulate counts as two). Only the dense
// upcycled MoE and the adapter-MoE family have closed forms; spec.seq_len and
// spec.batch must be set.
double flops_estimate(const BackboneSpec& spec, CostMethod method);

// Methods enumerated for the given backbone, in table order.
std::vector<CostMethod> methods_for(Backbone backbone);

// Formats the proportion exactly as the table prints it (truncated).
std::string format_proportion(const CostReport& report);

}  // namespace goatlab
