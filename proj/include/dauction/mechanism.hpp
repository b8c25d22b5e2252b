#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dauction/market.hpp"
#include "dauction/mechanism_net.hpp"
#include "dauction/outcome.hpp"

namespace dauction {

// Any map from reported markets to outcomes. seeds[k] drives whatever
// internal randomness the mechanism uses on market k, so two calls with the
// same seeds share their random draws.
class Mechanism {
 public:
  virtual ~Mechanism() = default;
  virtual std::string name() const = 0;
  virtual std::vector<Outcome> run(std::span<const MarketInstance> batch,
                                   std::span<const std::uint64_t> seeds) const = 0;

  Outcome run_one(const MarketInstance& inst, std::uint64_t seed = 0) const {
    return run(std::span<const MarketInstance>(&inst, 1), std::span<const std::uint64_t>(&seed, 1))
        .front();
  }
};

class FunctionMechanism final : public Mechanism {
 public:
  using Fn = std::function<Outcome(const MarketInstance&, Rng&)>;

  FunctionMechanism(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}

  std::string name() const override { return name_; }

  std::vector<Outcome> run(std::span<const MarketInstance> batch,
                           std::span<const std::uint64_t> seeds) const override {
    require(seeds.size() == batch.size(), "mechanism: one seed per market required");
    std::vector<Outcome> out;
    out.reserve(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
      Rng rng(seeds[k]);
      out.push_back(fn_(batch[k], rng));
    }
    return out;
  }

 private:
  std::string name_;
  Fn fn_;
};

class NeuralMechanism final : public Mechanism {
 public:
  explicit NeuralMechanism(std::shared_ptr<const MechanismNet<float>> net,
                           std::string name = "model")
      : net_(std::move(net)), name_(std::move(name)) {}

  std::string name() const override { return name_; }
  const MechanismNet<float>& net() const { return *net_; }

  std::vector<Outcome> run(std::span<const MarketInstance> batch,
                           std::span<const std::uint64_t> seeds) const override {
    require(seeds.size() == batch.size(), "mechanism: one seed per market required");
    return net_->evaluate(batch);
  }

 private:
  std::shared_ptr<const MechanismNet<float>> net_;
  std::string name_;
};

}  // namespace dauction
