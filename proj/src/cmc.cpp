#include "histgen/cmc.hpp"

#include <stdexcept>

namespace histgen {

using ad::Var;

CmcModule::CmcModule(nn::ParamStore& store, const CmcConfig& config, int d_model)
    : cfg_(config),
      memory_(store.create("cmc.memory", config.memory_slots, d_model, nn::Init::Normal002)),
      prototypes_(
          store.create("cmc.prototypes", config.prototypes, d_model, nn::Init::Normal002)),
      proto_attn_(store, "cmc.proto_attn", d_model, config.heads),
      memory_attn_(store, "cmc.memory_attn", d_model, config.heads),
      vis_proj_(store, "cmc.vis_proj", d_model, d_model),
      txt_proj_(store, "cmc.txt_proj", d_model, d_model),
      vis_gate_(store.create("cmc.vis_gate", 1, d_model, nn::Init::Zeros)),
      txt_gate_(store.create("cmc.txt_gate", 1, d_model, nn::Init::Zeros)) {
  cfg_.validate();
}

Var CmcModule::select_prototypes(const Var& visual, Var* attn_out,
                                 nn::AttentionProbe* probe) const {
  if (visual->rows() < 1) throw std::invalid_argument("select_prototypes: empty visual sequence");
  return proto_attn_.forward(prototypes_, visual, nullptr, false, attn_out, probe);
}

Var CmcModule::query_memory(const Var& queries, nn::AttentionProbe* probe) const {
  if (queries->rows() < 1) throw std::invalid_argument("query_memory: no queries");
  return memory_attn_.forward(queries, memory_, nullptr, false, nullptr, probe);
}

Var CmcModule::aggregate_visual(const Var& original, const Var& responses,
                                const Var& proto_attn) const {
  if (proto_attn->rows() != responses->rows() || proto_attn->cols() != original->rows())
    throw std::invalid_argument("aggregate_visual: attention/response shape mismatch");
  Var broadcast = ad::matmul(ad::transpose(proto_attn), responses);  // seq x d
  return ad::add(original, ad::mul_rowvec(vis_proj_.forward(broadcast), vis_gate_));
}

Var CmcModule::aggregate_textual(const Var& original, const Var& responses) const {
  if (responses->rows() != original->rows())
    throw std::invalid_argument("aggregate_textual: response count mismatch");
  return ad::add(original, ad::mul_rowvec(txt_proj_.forward(responses), txt_gate_));
}

Var CmcModule::visual_pass(const Var& x, CmcTrace* trace) const {
  Var attn;
  Var selected = select_prototypes(x, &attn, trace ? &trace->prototype_attention : nullptr);
  Var responses = query_memory(selected, trace ? &trace->memory_attention : nullptr);
  return aggregate_visual(x, responses, attn);
}

Var CmcModule::textual_pass(const Var& y, CmcTrace* trace) const {
  if (y->rows() < 1) throw std::invalid_argument("textual_pass: empty token sequence");
  Var responses = query_memory(y, trace ? &trace->memory_attention : nullptr);
  return aggregate_textual(y, responses);
}

}  // namespace histgen
