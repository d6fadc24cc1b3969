#include "esam3/model/params.hpp"

#include <cstring>

#include "esam3/error.hpp"

namespace esam3::model {

std::string tag_name(ModuleTag tag) {
  switch (tag) {
    case ModuleTag::kEncoder: return "encoder";
    case ModuleTag::kProjection: return "projection";
    case ModuleTag::kDecoder: return "decoder";
    case ModuleTag::kPerceiver: return "perceiver";
    case ModuleTag::kTrackingHead: return "tracking_head";
    case ModuleTag::kPresenceHead: return "presence_head";
    case ModuleTag::kConceptTable: return "concept_table";
  }
  return "unknown";
}

const std::vector<ModuleTag>& all_tags() {
  static const std::vector<ModuleTag> tags = {ModuleTag::kEncoder,      ModuleTag::kProjection,   ModuleTag::kDecoder,
                                              ModuleTag::kPerceiver,    ModuleTag::kTrackingHead, ModuleTag::kPresenceHead,
                                              ModuleTag::kConceptTable};
  return tags;
}

ModuleTag tag_from_name(const std::string& name) {
  for (auto t : all_tags())
    if (tag_name(t) == name) return t;
  fail(ErrorKind::kInvalidArgument, "unknown module '" + name + "'");
}

ParamStore::ParamStore(const ParamStore& other) { *this = other; }

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this == &other) return *this;
  items_.clear();
  index_ = other.index_;
  for (const auto& p : other.items_) items_.push_back(std::make_unique<Param>(*p));
  return *this;
}

Tensor& ParamStore::add(const std::string& name, ModuleTag tag, Tensor init) {
  if (index_.contains(name)) fail(ErrorKind::kInvalidArgument, "duplicate parameter '" + name + "'");
  index_[name] = items_.size();
  items_.push_back(std::make_unique<Param>(Param{name, tag, std::move(init)}));
  return items_.back()->value;
}

Param& ParamStore::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::kInvalidArgument, "no parameter named '" + name + "'");
  return *items_[it->second];
}

const Param& ParamStore::param(const std::string& name) const {
  return const_cast<ParamStore*>(this)->param(name);
}

std::vector<Param*> ParamStore::params() {
  std::vector<Param*> out;
  for (auto& p : items_) out.push_back(p.get());
  return out;
}

std::vector<const Param*> ParamStore::params() const {
  std::vector<const Param*> out;
  for (const auto& p : items_) out.push_back(p.get());
  return out;
}

std::size_t ParamStore::count(const TagSet& tags) const {
  std::size_t n = 0;
  for (const auto& p : items_)
    if (tags.empty() || tags.contains(p->tag)) n += p->value.numel();
  return n;
}

std::uint64_t ParamStore::hash(const TagSet& tags) const {
  std::uint64_t h = fnv1a("params");
  for (const auto& p : items_) {
    if (!tags.empty() && !tags.contains(p->tag)) continue;
    h = fnv1a(p->name, h);
    const auto& v = p->value.vec();
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double)), h);
  }
  return h;
}

void ParamStore::zero_grads() {
  for (auto& p : items_) p->value.clear_grad();
}

Session::Session(Tape& tape, ParamStore& store, TagSet trainable, bool training, Rng* rng)
    : tape_(tape), store_(store), trainable_(std::move(trainable)), training_(training), rng_(rng) {}

Var Session::p(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Param& prm = store_.param(name);
  Var v = tape_.param(prm.value, trainable_.contains(prm.tag));
  bound_.emplace(name, v);
  return v;
}

}  // namespace esam3::model
