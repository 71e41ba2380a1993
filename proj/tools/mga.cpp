// mga: command-line front end.
//
//   mga run [config] [--<key> value ...]   train + evaluate, write a run directory
//   mga params --component cmga --dim 2048 --ratio 8
//   mga bench [--frames 8 --height 7 --width 7 ...]
//   mga export-attn --run DIR --cell full --which cross --query 0 --frame 0
//   mga gen-data --out DIR [--instances 40 --seed 1 ...]
//
// Exit codes: 0 ok, 2 configuration, 3 numerical failure, 4 missing artifact.

#include "mga/error.hpp"
#include "mga/kernels.hpp"
#include "mga/report.hpp"
#include "mga/run_config.hpp"
#include "mga/runner.hpp"
#include "mga/synth.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <map>

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitMissing = 4;

int cmd_run(const std::string& config_path, const std::map<std::string, std::string>& overrides) {
    mga::RunConfig cfg = config_path.empty() ? mga::RunConfig{} : mga::load_run_config(config_path);
    for (const auto& [k, v] : overrides) {
        mga::set_run_option(cfg, k, v);
    }
    mga::validate_run_config(cfg);
    const fs::path root = mga::resolve_output_root(cfg.output_dir);
    std::cout << "kernels: " << mga::kernels::isa_name(mga::kernels::active_isa()) << '\n';
    const mga::RunOutcome out = mga::run_experiment(cfg, root, &std::cout);
    std::cout << "results: " << (out.dir / "results.txt").string() << '\n';
    return kExitOk;
}

int cmd_params(const std::string& component, const mga::ParamDims& dims, bool itemized) {
    const mga::ParamCount pc = mga::count_parameters(mga::component_from_string(component), dims);
    if (itemized) {
        for (const mga::ParamItem& it : pc.items) {
            std::printf("%-36s %-18s %12zu\n", it.name.c_str(), mga::shape_str(it.shape).c_str(), it.count);
        }
    }
    std::printf("component=%s\ntotal=%zu\ntrainable=%zu\n", component.c_str(), pc.total, pc.trainable);
    return kExitOk;
}

int cmd_params_table(std::size_t dim) {
    std::printf("%-4s %14s\n", "r2", "cmga params");
    for (std::size_t r : {2, 4, 8, 16}) {
        mga::ParamDims d;
        d.channels = dim;
        d.ratio = r;
        const mga::ParamCount pc = mga::count_parameters(mga::Component::Cmga, d);
        std::printf("%-4zu %14zu  (%.2fM)\n", r, pc.total, static_cast<double>(pc.total) / 1e6);
    }
    return kExitOk;
}

int cmd_bench(const mga::BenchShape& shape, std::size_t reps) {
    const mga::BenchCost fw = mga::bench_analytic(shape, mga::CrossVariant::FrameWise);
    const mga::BenchCost fa = mga::bench_analytic(shape, mga::CrossVariant::FrameAll);
    const double tw = mga::bench_wall_ms(shape, mga::CrossVariant::FrameWise, reps);
    const double ta = mga::bench_wall_ms(shape, mga::CrossVariant::FrameAll, reps);
    std::printf("%-10s %16s %16s %14s %12s\n", "variant", "score_elements", "macs", "peak_floats", "median_ms");
    std::printf("%-10s %16zu %16zu %14zu %12.3f\n", "framewise", fw.score_elements, fw.macs, fw.peak_floats, tw);
    std::printf("%-10s %16zu %16zu %14zu %12.3f\n", "frameall", fa.score_elements, fa.macs, fa.peak_floats, ta);
    std::printf("element_ratio=%.6g\ntime_ratio=%.3f\n",
                static_cast<double>(fa.score_elements) / static_cast<double>(fw.score_elements), ta / tw);
    return kExitOk;
}

int cmd_gen_data(const fs::path& out, const mga::SynthConfig& cfg) {
    cfg.validate();
    const mga::Dataset data = mga::generate_corpus(cfg);
    fs::create_directories(out / "clips");
    std::vector<mga::ManifestEntry> manifest;
    for (const mga::Video& v : data.videos) {
        char name[48];
        std::snprintf(name, sizeof name, "clips/c%02zu_%06zu.mgaf", v.class_id, v.id);
        mga::save_features(out / name, v.clip);
        manifest.push_back({v.id, v.class_id, name});
    }
    mga::write_manifest(out / "manifest.tsv", manifest);
    std::printf("wrote %zu clips to %s\n", manifest.size(), out.string().c_str());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Motion-guided attention for few-shot video classification"};
    app.require_subcommand(1);

    // run: every RunConfig key is also a flag.
    auto* run = app.add_subcommand("run", "train and evaluate; writes a run directory");
    std::string config_path;
    run->add_option("config", config_path, "key = value config file");
    std::map<std::string, std::string> flag_values;
    for (const std::string& key : mga::run_config_keys()) {
        run->add_option("--" + key, flag_values[key], "overrides '" + key + "' from the config file");
    }

    auto* params = app.add_subcommand("params", "itemized parameter count");
    std::string component = "cmga";
    mga::ParamDims dims;
    bool itemized = false;
    bool table = false;
    params->add_option("--component", component, "smga, cmga or adapter-model")->capture_default_str();
    params->add_option("--dim", dims.channels, "feature width D")->capture_default_str();
    params->add_option("--frames", dims.frames, "frames L")->capture_default_str();
    params->add_option("--ratio", dims.ratio, "compression factor r")->capture_default_str();
    params->add_option("--blocks", dims.backbone.blocks, "backbone blocks (adapter-model)")->capture_default_str();
    params->add_option("--adapter-ratio", dims.adapter_ratio, "D / D' (adapter-model)")->capture_default_str();
    params->add_flag("--itemized", itemized, "list every tensor");
    params->add_flag("--table", table, "C-MGA counts for r2 in {2,4,8,16} at --dim");

    auto* bench = app.add_subcommand("bench", "frame-wise vs frame-all cross-association cost");
    mga::BenchShape shape;
    std::size_t reps = 5;
    bench->add_option("--frames", shape.frames)->capture_default_str();
    bench->add_option("--height", shape.height)->capture_default_str();
    bench->add_option("--width", shape.width)->capture_default_str();
    bench->add_option("--dim", shape.channels)->capture_default_str();
    bench->add_option("--ratio", shape.ratio)->capture_default_str();
    bench->add_option("--way", shape.n_way)->capture_default_str();
    bench->add_option("--shot", shape.k_shot)->capture_default_str();
    bench->add_option("--reps", reps, "timed repetitions (median reported)")->capture_default_str();

    auto* exp = app.add_subcommand("export-attn", "write saved score matrices as CSV and PGM");
    std::string run_dir;
    std::string cell = "full";
    std::string which = "cross";
    std::size_t query = 0;
    std::size_t frame = 0;
    std::string export_out;
    exp->add_option("--run", run_dir, "run directory")->required();
    exp->add_option("--cell", cell, "baseline, smga, cmga or full")->capture_default_str();
    exp->add_option("--which", which, "self or cross")->capture_default_str();
    exp->add_option("--query", query)->capture_default_str();
    exp->add_option("--frame", frame)->capture_default_str();
    exp->add_option("--out", export_out, "output directory (default <run>/export)");

    auto* gen = app.add_subcommand("gen-data", "write a synthetic corpus as feature files plus manifest");
    mga::SynthConfig synth;
    std::string gen_out;
    gen->add_option("--out", gen_out, "output directory (default $MGA_OUT/data)");
    gen->add_option("--instances", synth.instances_per_class)->capture_default_str();
    gen->add_option("--frames", synth.frames)->capture_default_str();
    gen->add_option("--grid", synth.grid)->capture_default_str();
    gen->add_option("--square", synth.square)->capture_default_str();
    gen->add_option("--noise", synth.noise)->capture_default_str();
    gen->add_option("--seed", synth.seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run) {
            std::map<std::string, std::string> overrides;
            for (const std::string& key : mga::run_config_keys()) {
                if (run->count("--" + key)) {
                    overrides[key] = flag_values[key];
                }
            }
            return cmd_run(config_path, overrides);
        }
        if (*params) {
            return table ? cmd_params_table(dims.channels) : cmd_params(component, dims, itemized);
        }
        if (*bench) {
            return cmd_bench(shape, reps);
        }
        if (*exp) {
            const fs::path out = export_out.empty() ? fs::path(run_dir) / "export" : fs::path(export_out);
            for (const fs::path& p : mga::export_attention(run_dir, cell, which, query, frame, out)) {
                std::cout << p.string() << '\n';
            }
            return kExitOk;
        }
        if (*gen) {
            const fs::path out = gen_out.empty() ? mga::resolve_output_root("runs") / "data" : fs::path(gen_out);
            return cmd_gen_data(out, synth);
        }
    } catch (const mga::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const mga::DataError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const mga::UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const mga::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const mga::MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << '\n';
        return kExitMissing;
    } catch (const mga::FormatError& e) {
        std::cerr << "unreadable artifact: " << e.what() << '\n';
        return kExitMissing;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kExitOk;
}
