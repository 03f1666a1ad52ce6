#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>
#include <json.hpp>

#include "senskit/pipeline.hpp"

namespace fs = std::filesystem;
using namespace senskit;

namespace {

PipelineConfig toy_config(const fs::path& out) {
    PipelineConfig cfg = default_pipeline_config();
    cfg.nx = 12;
    cfg.ny = 12;
    cfg.sim_years = 2;
    cfg.spinup_years = 1;
    cfg.m_max = 6;
    cfg.out_dir = out;
    return cfg;
}

fs::path fresh_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("senskit_pipeline_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::map<std::string, std::uint64_t> tree_hash(const fs::path& root) {
    std::map<std::string, std::uint64_t> out;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file()) {
            const std::string rel = fs::relative(entry.path(), root).generic_string();
            out[rel] = fnv1a64(read_file(entry.path()));
        }
    return out;
}

}  // namespace

TEST_CASE("toy pipeline runs end to end with content-hash caching") {
    const fs::path out = fresh_dir("e2e");
    const PipelineConfig cfg = toy_config(out);

    const PipelineResult first = run_pipeline(cfg);
    REQUIRE(first.stages.size() == 6);
    for (const auto& st : first.stages) {
        CHECK(st.executed);
        for (const auto& rel : st.artifacts) CHECK(fs::exists(out / rel));
    }
    CHECK(first.simulator_invocations == 243);

    // Manifest carries every stage with its artifact list.
    const nlohmann::json manifest = nlohmann::json::parse(read_file(out / "manifest.json"));
    REQUIRE(manifest.contains("stages"));
    for (const auto& name : pipeline_stage_names()) {
        REQUIRE(manifest["stages"].contains(name));
        for (const auto& rel : manifest["stages"][name]["artifacts"])
            CHECK(fs::exists(out / rel.get<std::string>()));
    }

    // Tensor shapes: daily outlet series vs monthly maps, one year after spin-up.
    const OutcomeTensor series = read_tensor(out / "tensors" / "outflow_no3_load.bin");
    CHECK(series.n_runs == 243);
    CHECK(series.n_time == 365);
    CHECK(series.n_pixels == 1);
    CHECK(series.time_step == "day");
    CHECK(series.time_axis.front() == 365);
    const OutcomeTensor maps = read_tensor(out / "tensors" / "nh3_emission.bin");
    CHECK(maps.n_time == 12);
    CHECK(maps.n_pixels == 144);
    CHECK(maps.time_step == "month");
    CHECK(maps.time_axis.front() == 12);
    CHECK(maps.grid.landuse.size() == 144);

    // Figure bundles: per-outcome dynamics for all outcomes, maps only for map outcomes.
    CHECK(fs::exists(out / "report" / "fig2_outflow_discharge.json"));
    CHECK(fs::exists(out / "report" / "fig4_nh3_emission.json"));
    CHECK_FALSE(fs::exists(out / "report" / "fig4_outflow_discharge.json"));
    const nlohmann::json fig7 = nlohmann::json::parse(read_file(out / "report" / "fig7.json"));
    CHECK(fig7["m"].get<int>() >= 2);
    CHECK(fig7["planes"].is_array());

    const auto aggregates = read_csv(out / "analysis" / "aggregates.csv");
    REQUIRE(aggregates.size() == 244);
    CHECK(aggregates[0].size() == 18);
    const auto associations = read_csv(out / "analysis" / "associations.csv");
    CHECK(associations.size() == 1 + 17 * 11);
    const auto table2 = read_csv(out / "synthesis" / "table2.csv");
    CHECK(table2.size() >= 3);  // header plus at least two clusters

    SECTION("rerun with unchanged config simulates nothing and keeps every byte") {
        const auto before = tree_hash(out);
        const PipelineResult second = run_pipeline(cfg);
        CHECK(second.simulator_invocations == 0);
        for (const auto& st : second.stages) CHECK_FALSE(st.executed);
        CHECK(tree_hash(out) == before);
    }

    SECTION("changing an analysis knob reruns only the downstream stages") {
        PipelineConfig tweaked = cfg;
        tweaked.ts_clusters = 4;
        const PipelineResult second = run_pipeline(tweaked);
        CHECK(second.simulator_invocations == 0);
        CHECK_FALSE(second.stages[0].executed);
        CHECK_FALSE(second.stages[1].executed);
        CHECK_FALSE(second.stages[2].executed);
        CHECK(second.stages[3].executed);
        CHECK(second.stages[4].executed);
        CHECK(second.stages[5].executed);
    }

    SECTION("forcing a stage rerun reproduces identical bytes") {
        const auto before = tree_hash(out);
        const PipelineResult forced = run_pipeline(cfg, "design", "report", "analyze");
        CHECK(forced.simulator_invocations == 0);
        CHECK_FALSE(forced.stages[2].executed);
        CHECK(forced.stages[3].executed);
        CHECK(forced.stages[5].executed);
        CHECK(tree_hash(out) == before);
    }
}

TEST_CASE("parallel and serial execution produce identical artifact trees") {
    const fs::path serial_out = fresh_dir("serial");
    const fs::path parallel_out = fresh_dir("parallel");
    PipelineConfig serial = toy_config(serial_out);
    PipelineConfig parallel = toy_config(parallel_out);
    parallel.jobs = 3;

    run_pipeline(serial);
    run_pipeline(parallel);
    CHECK(tree_hash(serial_out) == tree_hash(parallel_out));
}

TEST_CASE("resolution six at eleven factors fails in the design stage") {
    PipelineConfig cfg = toy_config(fresh_dir("infeasible"));
    cfg.n_basic = 5;
    cfg.min_resolution = 6;
    REQUIRE_THROWS_AS(run_pipeline(cfg), InfeasibleDesign);
}

TEST_CASE("report against an empty directory reports the missing artifacts") {
    const PipelineConfig cfg = toy_config(fresh_dir("empty"));
    REQUIRE_THROWS_AS(run_pipeline(cfg, "report", "report"), MissingArtifact);
}

TEST_CASE("config files require explicit seeds and known keys") {
    CHECK_THROWS_AS(pipeline_config_from_json({{"analysis_seed", 1}}), ConfigError);
    CHECK_THROWS_AS(pipeline_config_from_json({{"forcing_seed", 1}}), ConfigError);
    CHECK_THROWS_AS(
        pipeline_config_from_json({{"forcing_seed", 1}, {"analysis_seed", 2}, {"bogus", 3}}),
        ConfigError);
    CHECK_THROWS_AS(pipeline_config_from_json({{"forcing_seed", 1},
                                               {"analysis_seed", 2},
                                               {"forcing_csv", "/nonexistent/forcing.csv"}}),
                    ConfigError);
    CHECK_THROWS_AS(pipeline_config_from_json({{"forcing_seed", 1},
                                               {"analysis_seed", 2},
                                               {"rates", {{"bogus", 0.5}}}}),
                    ConfigError);
    CHECK_THROWS_AS(pipeline_config_from_json({{"forcing_seed", 1},
                                               {"analysis_seed", 2},
                                               {"factors", {{"J", {1.0, 2.0, 3.0}}}}}),
                    ConfigError);
    CHECK_THROWS_AS(pipeline_config_from_json({{"forcing_seed", 1},
                                               {"analysis_seed", 2},
                                               {"factors", {{"Z", {1.0, 2.0, 3.0}}}}}),
                    ConfigError);
    CHECK_THROWS_AS(pipeline_config_from_json({{"forcing_seed", 1},
                                               {"analysis_seed", 2},
                                               {"outcomes", {"not_an_outcome"}}}),
                    ConfigError);
    CHECK_THROWS_AS(
        pipeline_config_from_json({{"forcing_seed", 1}, {"analysis_seed", 2}, {"jobs", 0}}),
        ConfigError);

    const nlohmann::json good = {{"forcing_seed", 7},
                                 {"analysis_seed", 9},
                                 {"design", {{"n_basic", 4}, {"min_resolution", 3}, {"seed", 5}}},
                                 {"landscape", {{"nx", 16}, {"ny", 12}, {"sim_years", 3}}},
                                 {"rates", {{"drain", 0.4}}},
                                 {"factors", {{"K", {100.0, 200.0, 300.0}}}},
                                 {"analysis", {{"n_keep", 3}, {"ts_clusters", 4}}},
                                 {"outcomes", {"nh3_emission", "outflow_no3_load"}},
                                 {"out", "somewhere"},
                                 {"jobs", 2}};
    const PipelineConfig cfg = pipeline_config_from_json(good);
    CHECK(cfg.forcing_seed == 7);
    CHECK(cfg.analysis_seed == 9);
    CHECK(cfg.n_basic == 4);
    CHECK(cfg.design_seed == 5);
    CHECK(cfg.nx == 16);
    CHECK(cfg.sim_years == 3);
    CHECK(cfg.rates.drain == 0.4);
    CHECK(cfg.factors[cfg.factors.index_of('K')].levels[2] == 300.0);
    CHECK(cfg.n_keep == 3);
    CHECK(cfg.ts_clusters == 4);
    CHECK(cfg.outcomes.size() == 2);
    CHECK(cfg.out_dir == fs::path("somewhere"));
    CHECK(cfg.jobs == 2);

    // Files resolve forcing paths against their own directory.
    const fs::path dir = fresh_dir("config");
    const Forcing f = generate_forcing(3 * 365, 11);
    write_forcing_csv(dir / "forcing.csv", f);
    nlohmann::json with_file = good;
    with_file["forcing_csv"] = "forcing.csv";
    write_file(dir / "pipeline.json", with_file.dump(2));
    const PipelineConfig loaded = load_pipeline_config(dir / "pipeline.json");
    REQUIRE(loaded.forcing_csv.has_value());
    CHECK(fs::exists(*loaded.forcing_csv));
    CHECK_THROWS_AS(load_pipeline_config(dir / "nope.json"), ConfigError);
    write_file(dir / "broken.json", "{not json");
    CHECK_THROWS_AS(load_pipeline_config(dir / "broken.json"), ConfigError);
}
