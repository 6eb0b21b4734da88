#include <catch2/catch_amalgamated.hpp>

#include "splitfrozen/costmodel.hpp"
#include "splitfrozen/rng.hpp"

using namespace splitfrozen;

namespace {

WorkloadSpec paper_workload() {
    WorkloadSpec w;
    w.batch_size = 72;
    w.seq_len = 128;
    w.lora_rank = 4;
    return w;
}

}  // namespace

TEST_CASE("forward flops per layer, closed form") {
    ModelProfile m = gpt2_small_profile();
    WorkloadSpec w;
    w.batch_size = 1;
    w.seq_len = 128;
    // 128 * (24*768^2 + 4*768*128), evaluated independently.
    CHECK(forward_flops_per_layer(m, w) == 1862270976.0);

    ModelProfile unit;
    unit.name = "unit";
    unit.num_layers = 1;
    unit.hidden_dim = 1;
    unit.num_heads = 1;
    unit.ffn_dim = 4;
    unit.vocab_size = 2;
    WorkloadSpec tiny;
    tiny.batch_size = 1;
    tiny.seq_len = 1;
    CHECK(forward_flops_per_layer(unit, tiny) == 28.0);

    WorkloadSpec two = w;
    two.batch_size = 2;
    CHECK(forward_flops_per_layer(m, two) == 2.0 * forward_flops_per_layer(m, w));
}

TEST_CASE("backward decomposition: B equals forward, frozen W is free") {
    ModelProfile m = gpt2_small_profile();
    WorkloadSpec w = paper_workload();
    const BackwardFlops bw = backward_flops_per_layer(m, w);
    CHECK(bw.grad_compute == forward_flops_per_layer(m, w));
    CHECK(bw.weight_update_frozen == 0.0);
    CHECK(bw.weight_update_lora == 2.0 * lora_flops_per_layer(m, w));

    WorkloadSpec single = w;
    single.batch_size = 1;
    // 4 projections * 2*R*(d+d) * seq = 16*4*768*128 per sample, W doubles it.
    CHECK(lora_flops_per_layer(m, single) == 6291456.0);
    CHECK(backward_flops_per_layer(m, single).weight_update_lora == 12582912.0);

    WorkloadSpec norank = w;
    norank.lora_rank = 0;
    CHECK(lora_flops_per_layer(m, norank) == 0.0);
    CHECK(backward_flops_per_layer(m, norank).weight_update_lora == 0.0);

    WorkloadSpec doubled = w;
    doubled.lora_rank = 8;
    CHECK(lora_flops_per_layer(m, doubled) == 2.0 * lora_flops_per_layer(m, w));
}

TEST_CASE("activation bytes: constant across cut depths") {
    ModelProfile m = gpt2_small_profile();
    WorkloadSpec w = paper_workload();
    CHECK(activation_bytes(m, w) == 28311552.0);  // 72*128*768*4

    ModelProfile unit = m;
    unit.hidden_dim = 1;
    unit.num_heads = 1;
    WorkloadSpec tiny;
    tiny.batch_size = 1;
    tiny.seq_len = 1;
    CHECK(activation_bytes(unit, tiny) == 4.0);

    // The formula has no cut-depth input at all; assigned_layers on the
    // device profile cannot change it.
    DeviceProfile shallow{0, 1e12, 1};
    DeviceProfile deep{1, 1e12, 3};
    (void)shallow;
    (void)deep;
    CHECK(activation_bytes(m, w) == activation_bytes(m, w));
}

TEST_CASE("stage and transmission times") {
    CHECK(stage_time(0.0, 1e12) == 0.0);
    ChannelProfile ch;
    ch.rate_bps = 600e6;
    CHECK(xmit_time(600e6 / 8.0, ch) == 1.0);

    // 1.86 GFLOP on 10% of one 82.6 TFLOPS GPU (server 330.4 / 4).
    const double device = 330.4e12 / 4.0 * 0.10;
    CHECK(stage_time(1862270976.0, device) ==
          Catch::Approx(2.2545653462469734e-4).epsilon(1e-12));

    CHECK_THROWS_AS(stage_time(1.0, 0.0), std::invalid_argument);
    ChannelProfile bad;
    bad.rate_bps = 0.0;
    CHECK_THROWS_AS(xmit_time(1.0, bad), std::invalid_argument);
}

TEST_CASE("linearity in batch size across random shapes") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        ModelProfile m;
        m.name = "fuzz";
        m.num_layers = 1 + static_cast<std::uint32_t>(rng.next_below(20));
        m.num_heads = 1 + static_cast<std::uint32_t>(rng.next_below(8));
        m.hidden_dim = m.num_heads * (1 + static_cast<std::uint32_t>(rng.next_below(64)));
        m.ffn_dim = 4 * m.hidden_dim;
        m.vocab_size = 100;
        m.validate();
        WorkloadSpec w;
        w.batch_size = 1 + static_cast<std::uint32_t>(rng.next_below(64));
        w.seq_len = 1 + static_cast<std::uint32_t>(rng.next_below(256));
        w.lora_rank = static_cast<std::uint32_t>(rng.next_below(9));
        WorkloadSpec scaled = w;
        scaled.batch_size *= 3;
        CHECK(forward_flops_per_layer(m, scaled) ==
              Catch::Approx(3.0 * forward_flops_per_layer(m, w)).epsilon(1e-12));
        CHECK(lora_flops_per_layer(m, scaled) ==
              Catch::Approx(3.0 * lora_flops_per_layer(m, w)).epsilon(1e-12));
        CHECK(activation_bytes(m, scaled) ==
              Catch::Approx(3.0 * activation_bytes(m, w)).epsilon(1e-12));
    }
}

TEST_CASE("device prefix cost is the layer fraction of the full stack") {
    ModelProfile m = gpt2_small_profile();
    WorkloadSpec w = paper_workload();
    const double per_layer = forward_flops_per_layer(m, w);
    for (std::uint32_t prefix = 0; prefix <= m.num_layers; ++prefix) {
        const double device_cost = prefix * per_layer;  // forward only, no backward term
        CHECK(device_cost == Catch::Approx(static_cast<double>(prefix) / m.num_layers *
                                           (m.num_layers * per_layer)));
    }
}

TEST_CASE("profile validation") {
    ModelProfile m = gpt2_small_profile();
    m.hidden_dim = 770;  // not divisible by 12 heads
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    ModelProfile zero;
    CHECK_THROWS_AS(zero.validate(), std::invalid_argument);
}
