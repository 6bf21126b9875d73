#pragma once

#include <array>
#include <memory>

#include "scyclegan/config.hpp"
#include "scyclegan/optim.hpp"

namespace scg {

/// Container order used for checkpoints, seeds and optimizer slots.
enum class NetId { gen_ct2us = 0, gen_us2ct, disc_ct, disc_us, seg_ct, seg_us };

inline constexpr std::array<NetId, 6> kAllNets{NetId::gen_ct2us, NetId::gen_us2ct, NetId::disc_ct,
                                               NetId::disc_us,   NetId::seg_ct,    NetId::seg_us};

inline const char* net_name(NetId id) {
  static constexpr const char* names[] = {"gen_ct2us", "gen_us2ct", "disc_ct", "disc_us", "seg_ct", "seg_us"};
  return names[static_cast<int>(id)];
}

template <typename T>
struct Models {
  std::unique_ptr<Generator<T>> gen_ct2us, gen_us2ct;
  std::unique_ptr<Discriminator<T>> disc_ct, disc_us;
  std::unique_ptr<Segmentor<T>> seg_ct, seg_us;

  /// Fresh networks; each is seeded from (cfg.seed, network slot).
  static Models build(const TrainConfig& cfg) {
    cfg.validate();
    auto seed_of = [&](NetId id) { return hash_counters({cfg.seed, 0x6e657473, static_cast<std::uint64_t>(id)}); };
    Models m;
    m.gen_ct2us = std::make_unique<Generator<T>>(cfg.generator_config(), seed_of(NetId::gen_ct2us));
    m.gen_us2ct = std::make_unique<Generator<T>>(cfg.generator_config(), seed_of(NetId::gen_us2ct));
    m.disc_ct = std::make_unique<Discriminator<T>>(cfg.discriminator, seed_of(NetId::disc_ct));
    m.disc_us = std::make_unique<Discriminator<T>>(cfg.discriminator, seed_of(NetId::disc_us));
    m.seg_ct = std::make_unique<Segmentor<T>>(cfg.segmentor_config(), seed_of(NetId::seg_ct));
    m.seg_us = std::make_unique<Segmentor<T>>(cfg.segmentor_config(), seed_of(NetId::seg_us));
    return m;
  }

  Network<T>& net(NetId id) const {
    switch (id) {
      case NetId::gen_ct2us: return *gen_ct2us;
      case NetId::gen_us2ct: return *gen_us2ct;
      case NetId::disc_ct: return *disc_ct;
      case NetId::disc_us: return *disc_us;
      case NetId::seg_ct: return *seg_ct;
      case NetId::seg_us: return *seg_us;
    }
    throw ArgumentError("bad network id");
  }

  void set_modes(Mode generators, Mode discriminators, Mode segmentors) const {
    gen_ct2us->set_mode(generators);
    gen_us2ct->set_mode(generators);
    disc_ct->set_mode(discriminators);
    disc_us->set_mode(discriminators);
    seg_ct->set_mode(segmentors);
    seg_us->set_mode(segmentors);
  }

  void zero_grad() const {
    for (auto id : kAllNets) net(id).zero_grad();
  }
};

/// One optimizer per network, indexed like kAllNets.
template <typename T>
struct Optimizers {
  std::array<Adam<T>, 6> slots;

  static Optimizers build(const Models<T>& models) {
    Optimizers o;
    for (auto id : kAllNets) o.slots[static_cast<int>(id)] = Adam<T>(models.net(id).parameter_count());
    return o;
  }

  Adam<T>& operator[](NetId id) { return slots[static_cast<int>(id)]; }
  const Adam<T>& operator[](NetId id) const { return slots[static_cast<int>(id)]; }
};

}  // namespace scg
