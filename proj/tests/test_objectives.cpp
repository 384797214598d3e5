#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "structlm/objectives.hpp"
#include "support/finite_diff.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace structlm;
using namespace structlm::testing;

namespace {

std::vector<TokenizedSequence> random_sequences(std::size_t count, std::size_t cells, std::size_t max_len,
                                                std::uint64_t seed) {
    Rng rng(seed);
    auto vocab = fixture_vocab();
    std::vector<TokenizedSequence> out;
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(encode_document(random_document(rng, cells), vocab, max_len, LayoutMode::cell_level));
    }
    return out;
}

}  // namespace

TEST_CASE("area_of examples") {
    CHECK(area_of({0, 0, 250, 250}, 16) == 0);
    CHECK(area_of({999, 999, 999, 999}, 16) == 15);
    CHECK(area_of({1000, 1000, 1000, 1000}, 16) == 15);
    CHECK(area_of({480, 230, 540, 250}, 16) == 2);
    CHECK(area_of({0, 0, 0, 0}, 16) == 0);
    CHECK_THROWS_AS(area_of({10, 0, 5, 0}, 16), contract_error);
    CHECK_THROWS_AS(area_of({0, 0, 1, 1}, 12), contract_error);
}

TEST_CASE("area_of matches rectangle membership on a stride-7 sweep") {
    std::set<std::int64_t> hit;
    for (int cy = 0; cy <= 1000; cy += 7) {
        for (int cx = 0; cx <= 1000; cx += 7) {
            const auto got = area_of({cx, cy, cx, cy}, 16);
            REQUIRE(got == brute_force_area(cx, cy, 4));
            hit.insert(got);
            // Half-integer centers from odd-width boxes.
            if (cx < 1000 && cy < 1000) {
                REQUIRE(area_of({cx, cy, cx + 1, cy + 1}, 16) == brute_force_area(cx + 0.5, cy + 0.5, 4));
            }
        }
    }
    CHECK(hit.size() == 16);
    // Other square grids.
    for (int side : {1, 2, 3, 5}) {
        for (int c = 0; c <= 1000; c += 13) {
            CHECK(area_of({c, 1000 - c, c, 1000 - c}, side * side) == brute_force_area(c, 1000 - c, side));
        }
    }
}

TEST_CASE("MVLM sampler statistics and contracts") {
    PretrainConfig cfg;
    auto seqs = random_sequences(1800, 30, 128, 5);
    Rng rng(99);
    std::size_t eligible = 0, selected = 0;
    std::map<MaskAction, std::size_t> actions;
    for (const auto& seq : seqs) {
        auto s = sample_mvlm(seq, cfg, 260, rng);
        for (std::size_t i = 0; i < seq.length; ++i) eligible += seq.is_special(i) ? 0 : 1;
        selected += s.masked_positions.size();
        for (std::size_t k = 0; k < s.masked_positions.size(); ++k) {
            const auto pos = static_cast<std::size_t>(s.masked_positions[k]);
            REQUIRE_FALSE(seq.is_special(pos));
            ++actions[s.actions[k]];
            switch (s.actions[k]) {
            case MaskAction::mask_token: CHECK(s.input_ids[pos] == Vocab::kMask); break;
            case MaskAction::random_token:
                CHECK(s.input_ids[pos] >= Vocab::kNumReserved);
                CHECK(s.input_ids[pos] < 260);
                break;
            case MaskAction::keep: CHECK(s.input_ids[pos] == seq.token_ids[pos]); break;
            }
        }
        // Every labelled position was selected and vice versa.
        std::size_t labelled = 0;
        for (std::size_t i = 0; i < seq.max_len(); ++i) {
            if (s.labels[i] == kIgnoreLabel) {
                CHECK(s.input_ids[i] == seq.token_ids[i]);
                continue;
            }
            ++labelled;
            CHECK(s.labels[i] == seq.token_ids[i]);
        }
        CHECK(labelled == s.masked_positions.size());
    }
    REQUIRE(eligible >= 100000);
    const double rate = static_cast<double>(selected) / static_cast<double>(eligible);
    CHECK(std::abs(rate - 0.15) <= 0.005);
    const double n = static_cast<double>(selected);
    CHECK(std::abs(actions[MaskAction::mask_token] / n - 0.8) <= 0.01);
    CHECK(std::abs(actions[MaskAction::random_token] / n - 0.1) <= 0.01);
    CHECK(std::abs(actions[MaskAction::keep] / n - 0.1) <= 0.01);
}

TEST_CASE("MVLM force-selects one token and never touches boxes") {
    PretrainConfig cfg;
    cfg.mask_rate = 1e-9;
    auto seqs = random_sequences(20, 3, 32, 8);
    Rng rng(1);
    for (const auto& seq : seqs) {
        auto ex = make_pretrain_example(seq, PretrainConfig{}, 260, rng);
        auto s = sample_mvlm(seq, cfg, 260, rng);
        CHECK(s.masked_positions.size() == 1);
        cfg.cpc_enabled = false;
        auto no_cpc = make_pretrain_example(seq, cfg, 260, rng);
        CHECK(no_cpc.sequence.boxes == seq.boxes);
        cfg.cpc_enabled = true;
    }
    PretrainConfig fixed;
    fixed.sampling = SamplingMode::fixed_count;
    for (const auto& seq : seqs) {
        auto s = sample_mvlm(seq, fixed, 260, rng);
        std::size_t eligible = 0;
        for (std::size_t i = 0; i < seq.length; ++i) eligible += seq.is_special(i) ? 0 : 1;
        CHECK(s.masked_positions.size() ==
              std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(eligible)))));
    }
}

TEST_CASE("CPC sampler statistics, disjointness and labels") {
    PretrainConfig cfg;
    auto seqs = random_sequences(1200, 60, 128, 13);
    Rng rng(17);
    std::size_t eligible = 0, selected = 0, zeroed = 0;
    for (const auto& seq : seqs) {
        auto mvlm = sample_mvlm(seq, cfg, 260, rng);
        auto cpc = sample_cpc(seq, mvlm.masked_positions, cfg, rng);
        eligible += cpc.eligible_cells;
        selected += cpc.selected_cells.size();
        for (auto z : cpc.zeroed) zeroed += z;
        std::set<std::int64_t> masked_cells;
        for (auto p : mvlm.masked_positions) masked_cells.insert(seq.cell_index[static_cast<std::size_t>(p)]);
        for (std::size_t k = 0; k < cpc.selected_cells.size(); ++k) {
            const auto cell = cpc.selected_cells[k];
            CHECK_FALSE(masked_cells.count(cell));
            const auto expected = area_of(seq.cell_boxes[static_cast<std::size_t>(cell)], 16);
            for (std::size_t i = 0; i < seq.length; ++i) {
                if (seq.cell_index[i] != cell) continue;
                CHECK(cpc.labels[i] == expected);
                CHECK(mvlm.labels[i] == kIgnoreLabel);
                if (cpc.zeroed[k]) {
                    CHECK(cpc.boxes[i].is_empty());
                } else {
                    CHECK(cpc.boxes[i] == seq.boxes[i]);
                }
            }
        }
        for (std::size_t i = 0; i < seq.max_len(); ++i) {
            if (seq.is_special(i)) CHECK(cpc.labels[i] == kIgnoreLabel);
        }
    }
    REQUIRE(eligible >= 10000);
    CHECK(std::abs(static_cast<double>(selected) / static_cast<double>(eligible) - 0.15) <= 0.01);
    CHECK(std::abs(static_cast<double>(zeroed) / static_cast<double>(selected) - 0.9) <= 0.01);
}

TEST_CASE("CPC labels come from the original box") {
    auto vocab = fixture_vocab();
    RawDocument doc{"d", 1000, 1000, {{"total", {700, 800, 900, 850}, {}}, {"date", {10, 10, 50, 20}, {}}}};
    auto seq = encode_document(doc, vocab, 16, LayoutMode::cell_level);
    PretrainConfig cfg;
    cfg.cell_select_rate = 1.0;
    cfg.zero_box_frac = 1.0;
    cfg.keep_box_frac = 0.0;
    Rng rng(4);
    std::vector<std::int64_t> none;
    auto cpc = sample_cpc(seq, none, cfg, rng);
    REQUIRE(cpc.selected_cells.size() == 2);
    // "total" sits in the bottom-right region: center (800, 825) -> row 3, col 3.
    CHECK(cpc.labels[2] == 15);
    CHECK(cpc.boxes[2].is_empty());
    CHECK(cpc.labels[2] != area_of({0, 0, 0, 0}, 16));

    // Word-level sequences still label with the cell box.
    auto words = encode_document(doc, vocab, 16, LayoutMode::word_level);
    auto wc = sample_cpc(words, none, cfg, rng);
    CHECK(wc.labels[2] == 15);
}

TEST_CASE("sampling is deterministic per seed") {
    auto seqs = random_sequences(5, 20, 64, 21);
    PretrainConfig cfg;
    for (const auto& seq : seqs) {
        Rng a(77), b(77);
        auto ea = make_pretrain_example(seq, cfg, 260, a);
        auto eb = make_pretrain_example(seq, cfg, 260, b);
        CHECK(ea.sequence.token_ids == eb.sequence.token_ids);
        CHECK(ea.sequence.boxes == eb.sequence.boxes);
        CHECK(ea.mvlm_labels == eb.mvlm_labels);
        CHECK(ea.cpc_labels == eb.cpc_labels);
    }
}

TEST_CASE("pretrain_loss conventions") {
    PretrainConfig cfg;
    PretrainExample ex;
    ex.mvlm_labels = {kIgnoreLabel, 3, kIgnoreLabel};
    ex.cpc_labels = {kIgnoreLabel, kIgnoreLabel, kIgnoreLabel};
    auto mlm = Tensor::from({3, 4}, {0, 1, 2, 3, 1, 0, 0, 2, 3, 3, 3, 3}, true);
    auto cpc = Tensor::zeros({3, 16}, true);
    auto no_cells = pretrain_loss(mlm, cpc, ex, cfg);
    const double expected_mvlm = std::log(std::exp(1.0) + 1 + 1 + std::exp(2.0)) - 2.0;
    CHECK(no_cells.loss.item() == doctest::Approx(expected_mvlm));
    CHECK(no_cells.mvlm_loss == doctest::Approx(expected_mvlm));

    ex.cpc_labels = {kIgnoreLabel, kIgnoreLabel, 7};
    auto uniform = pretrain_loss(mlm, cpc, ex, cfg);
    CHECK(uniform.cpc_loss == doctest::Approx(std::log(16.0)));
    CHECK(uniform.loss.item() == doctest::Approx(expected_mvlm + std::log(16.0)));

    ex.mvlm_labels = {kIgnoreLabel, kIgnoreLabel, kIgnoreLabel};
    ex.cpc_labels = {kIgnoreLabel, kIgnoreLabel, kIgnoreLabel};
    CHECK(pretrain_loss(mlm, cpc, ex, cfg).loss.item() == 0);
}

TEST_CASE("gathered objective equals the full-logit loss and passes the gradient check") {
    auto vocab = fixture_vocab();
    auto config = tiny_model_config(vocab.size());
    // At std 0.02 the attention gradients sit near 1e-8, where the ~2e-10
    // roundoff of the finite differences dominates.
    config.init_std = 0.3;
    auto params = Parameters::init(config, 31);
    Rng rng(2);
    auto doc = random_document(rng, 6);
    auto seq = encode_document(doc, vocab, config.max_len, LayoutMode::cell_level);
    PretrainConfig cfg;
    cfg.cell_select_rate = 0.5;
    auto ex = make_pretrain_example(seq, cfg, vocab.size(), rng);
    REQUIRE(!ex.selected_cell_indices.empty());

    auto hidden = encode(ex.sequence, params, config);
    auto full = pretrain_loss(head_mlm(hidden, params), head_cpc(hidden, params), ex, cfg);
    auto gathered = pretrain_objective(hidden, params, ex, cfg);
    CHECK(full.loss.item() == doctest::Approx(gathered.loss.item()).epsilon(1e-12));
    CHECK(full.cpc_correct == gathered.cpc_correct);

    auto build = [&] {
        auto h = encode(ex.sequence, params, config, ForwardOptions{.trim_padding = true});
        return pretrain_objective(h, params, ex, cfg).loss;
    };
    for (const auto& nt : params.named()) {
        if (nt.name.rfind("tag", 0) == 0 || nt.name.rfind("span", 0) == 0 || nt.name.rfind("cls", 0) == 0) continue;
        Tensor t = nt.tensor;
        params.zero_grads();
        backward(build());
        std::vector<real> analytic(t.grad().begin(), t.grad().end());
        // Embedding tables: only check rows that received gradient plus row 0.
        if (t.rows() > 64) {
            std::vector<real> a_sub, n_sub;
            const std::size_t d = t.cols();
            for (std::size_t r = 0; r < t.rows(); ++r) {
                bool touched = r == 0;
                for (std::size_t c = 0; c < d && !touched; ++c) touched = analytic[r * d + c] != 0;
                if (!touched) continue;
                for (std::size_t c = 0; c < d; ++c) {
                    real& v = t.at(r, c);
                    const real saved = v;
                    v = saved + 1e-5;
                    const real up = build().item();
                    v = saved - 1e-5;
                    const real down = build().item();
                    v = saved;
                    a_sub.push_back(analytic[r * d + c]);
                    n_sub.push_back((up - down) / 2e-5);
                }
            }
            CAPTURE(nt.name);
            CHECK(max_relative_error(a_sub, n_sub) <= 1e-4);
            continue;
        }
        auto numeric = central_differences(t, [&] { return build().item(); });
        CAPTURE(nt.name);
        CHECK(max_relative_error(analytic, numeric) <= 1e-4);
    }
}
