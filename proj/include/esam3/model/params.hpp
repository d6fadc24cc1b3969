#pragma once

// Named parameter storage shared by every trainable component, plus the
// per-step binding of those parameters onto a tape.

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "esam3/numerics/tape.hpp"
#include "esam3/rng.hpp"

namespace esam3::model {

using num::Shape;
using num::Tape;
using num::Tensor;
using num::Var;

enum class ModuleTag { kEncoder, kProjection, kDecoder, kPerceiver, kTrackingHead, kPresenceHead, kConceptTable };

std::string tag_name(ModuleTag tag);
ModuleTag tag_from_name(const std::string& name);
const std::vector<ModuleTag>& all_tags();

using TagSet = std::set<ModuleTag>;

struct Param {
  std::string name;
  ModuleTag tag;
  Tensor value;
};

class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Tensor& add(const std::string& name, ModuleTag tag, Tensor init);
  bool contains(const std::string& name) const { return index_.contains(name); }
  Param& param(const std::string& name);
  const Param& param(const std::string& name) const;
  Tensor& get(const std::string& name) { return param(name).value; }
  const Tensor& get(const std::string& name) const { return param(name).value; }

  /// Insertion order; pointers stay valid for the store's lifetime.
  std::vector<Param*> params();
  std::vector<const Param*> params() const;

  std::size_t size() const { return items_.size(); }
  /// Number of scalars, optionally restricted to some tags.
  std::size_t count(const TagSet& tags = {}) const;
  /// FNV-1a over names and raw values of params whose tag is in `tags`
  /// (all params when empty).
  std::uint64_t hash(const TagSet& tags = {}) const;

  void zero_grads();

 private:
  std::vector<std::unique_ptr<Param>> items_;
  std::map<std::string, std::size_t> index_;
};

/// Binds a ParamStore onto one tape for one forward/backward pass.
class Session {
 public:
  Session(Tape& tape, ParamStore& store, TagSet trainable, bool training = false, Rng* rng = nullptr);

  /// Tape leaf for a parameter, created on first use. Gradients flow back
  /// into the stored tensor only when its tag is trainable.
  Var p(const std::string& name);
  Var constant(Tensor t) { return tape_.constant(std::move(t)); }

  Tape& tape() { return tape_; }
  ParamStore& store() { return store_; }
  bool training() const { return training_; }
  /// Dropout stream; null disables dropout even in training mode.
  Rng* rng() { return rng_; }
  const TagSet& trainable() const { return trainable_; }

 private:
  Tape& tape_;
  ParamStore& store_;
  TagSet trainable_;
  bool training_;
  Rng* rng_;
  std::map<std::string, Var> bound_;
};

}  // namespace esam3::model
