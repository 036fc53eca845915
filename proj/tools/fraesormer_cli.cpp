#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "frs/accounting.hpp"
#include "frs/checkpoint.hpp"
#include "frs/gradcheck_suite.hpp"
#include "frs/synthetic.hpp"
#include "frs/train.hpp"

namespace {

std::vector<double> parse_fractions(const std::string& csv) {
    std::vector<double> out;
    size_t start = 0;
    while (start <= csv.size()) {
        const size_t comma = csv.find(',', start);
        const std::string tok =
            csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (tok.empty()) throw frs::ConfigError("empty entry in fractions list '" + csv + "'");
        try {
            size_t used = 0;
            out.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw frs::ConfigError("cannot parse fraction '" + tok + "'");
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw frs::IoError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw frs::IoError("write failed for '" + path + "'");
}

int run_gradcheck(uint64_t seed) {
    bool ok = true;
    std::cout << "check,max_rel_err\n";
    for (const auto& c : frs::run_op_gradchecks(seed)) {
        std::printf("%s,%.3e\n", c.name.c_str(), c.max_rel_err);
        ok = ok && c.max_rel_err < 1e-4;
    }
    const double block = frs::run_block_gradcheck(seed, 7);
    std::printf("block,%.3e\n", block);
    ok = ok && block < 1e-4;
    const double model = frs::run_model_gradcheck(seed);
    std::printf("model,%.3e\n", model);
    ok = ok && model < 1e-3;
    std::printf("status,%s\n", ok ? "ok" : "fail");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fraesormer: sparse partial channel attention backbone, desk scale"};
    app.require_subcommand(1);

    std::string config_path, data_dir, ckpt_path, out_path, input_path, fractions_csv;
    int resolution = 224;
    int n_samples = 0;
    int epochs = 25, batch = 32;
    double lr = 1e-3;
    uint64_t seed = 0;
    bool csv = false, no_clip = false;

    auto* params_cmd = app.add_subcommand("params", "parameter count breakdown");
    params_cmd->add_option("--config", config_path)->required();
    params_cmd->add_flag("--csv", csv, "emit CSV instead of an aligned table");

    auto* macs_cmd = app.add_subcommand("macs", "multiply-accumulate breakdown");
    macs_cmd->add_option("--config", config_path)->required();
    macs_cmd->add_option("--resolution", resolution)->required();
    macs_cmd->add_flag("--csv", csv, "emit CSV instead of an aligned table");

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    gradcheck_cmd->add_option("--seed", seed);

    auto* gen_cmd = app.add_subcommand("gen-data", "write the synthetic dataset");
    gen_cmd->add_option("--out", out_path)->required();
    gen_cmd->add_option("--n", n_samples)->required();
    gen_cmd->add_option("--seed", seed)->required();

    auto* train_cmd = app.add_subcommand("train", "train on a generated dataset");
    train_cmd->add_option("--config", config_path)->required();
    train_cmd->add_option("--data", data_dir)->required();
    train_cmd->add_option("--epochs", epochs)->required();
    train_cmd->add_option("--lr", lr);
    train_cmd->add_option("--batch", batch);
    train_cmd->add_option("--seed", seed);
    train_cmd->add_option("--out-ckpt", ckpt_path)->required();
    train_cmd->add_flag("--no-clip", no_clip, "disable global-norm gradient clipping");

    auto* eval_cmd = app.add_subcommand("eval", "top-1 accuracy of a checkpoint");
    eval_cmd->add_option("--config", config_path)->required();
    eval_cmd->add_option("--ckpt", ckpt_path)->required();
    eval_cmd->add_option("--data", data_dir)->required();

    auto* predict_cmd = app.add_subcommand("predict", "classify one sample file");
    predict_cmd->add_option("--config", config_path)->required();
    predict_cmd->add_option("--ckpt", ckpt_path)->required();
    predict_cmd->add_option("--input", input_path)->required();

    auto* sweep_cmd = app.add_subcommand("sweep-k", "accuracy across fixed top-k fractions");
    sweep_cmd->add_option("--config", config_path)->required();
    sweep_cmd->add_option("--data", data_dir)->required();
    sweep_cmd->add_option("--fractions", fractions_csv)->required();
    sweep_cmd->add_option("--out", out_path)->required();
    sweep_cmd->add_option("--seed", seed)->required();
    sweep_cmd->add_option("--epochs", epochs);
    sweep_cmd->add_option("--batch", batch);
    sweep_cmd->add_option("--lr", lr);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (params_cmd->parsed()) {
            const frs::AccountingReport rep = frs::count_params(frs::load_model_config(config_path));
            std::cout << (csv ? rep.to_csv() : rep.to_table());
        } else if (macs_cmd->parsed()) {
            const frs::AccountingReport rep =
                frs::count_macs(frs::load_model_config(config_path), resolution);
            std::cout << (csv ? rep.to_csv() : rep.to_table());
        } else if (gradcheck_cmd->parsed()) {
            return run_gradcheck(seed);
        } else if (gen_cmd->parsed()) {
            frs::SyntheticSpec spec;
            spec.seed = seed;
            frs::generate_synthetic(spec, n_samples, out_path);
            std::printf("generated,%d,%s\n", n_samples, out_path.c_str());
        } else if (train_cmd->parsed()) {
            const frs::ModelConfig cfg = frs::load_model_config(config_path);
            const frs::Dataset data = frs::load_dataset(data_dir);
            frs::Model<float> model = frs::build_model<float>(cfg, seed);
            frs::TrainConfig tc;
            tc.epochs = epochs;
            tc.batch_size = batch;
            tc.peak_lr = lr;
            tc.seed = seed;
            tc.clip_gradients = !no_clip;
            std::cout << "epoch,step,lr,loss,acc\n";
            frs::train_model(model, data, tc, &std::cout);
            frs::save_checkpoint(model, ckpt_path);
            std::printf("checkpoint,%s\n", ckpt_path.c_str());
        } else if (eval_cmd->parsed()) {
            const frs::ModelConfig cfg = frs::load_model_config(config_path);
            frs::Model<float> model = frs::build_model<float>(cfg, 0);
            frs::load_checkpoint(model, ckpt_path);
            const double top1 = frs::evaluate_model(model, frs::load_dataset(data_dir));
            std::printf("top1,%.4f\n", top1);
        } else if (predict_cmd->parsed()) {
            const frs::ModelConfig cfg = frs::load_model_config(config_path);
            frs::Model<float> model = frs::build_model<float>(cfg, 0);
            frs::load_checkpoint(model, ckpt_path);
            std::vector<frs::TensorBlob> blobs = frs::read_container(input_path);
            if (blobs.size() != 1 || blobs[0].name != "image")
                throw frs::CompatibilityError(
                    "input must hold exactly one tensor named 'image'");
            frs::Shape shape = blobs[0].shape;
            shape.insert(shape.begin(), 1);
            const frs::Tensor<float> batch =
                frs::Tensor<float>::from_data(shape, std::move(blobs[0].data));
            frs::NoGradScope<float> no_grad;
            const frs::Tensor<float> logits = frs::model_forward(model, batch);
            int best = 0;
            for (int j = 1; j < cfg.num_classes; ++j)
                if (logits.data()[j] > logits.data()[best]) best = j;
            std::printf("pred,%d\n", best);
        } else if (sweep_cmd->parsed()) {
            const frs::ModelConfig cfg = frs::load_model_config(config_path);
            const frs::Dataset data = frs::load_dataset(data_dir);
            frs::TrainConfig tc;
            tc.epochs = epochs;
            tc.batch_size = batch;
            tc.peak_lr = lr;
            tc.seed = seed;
            std::cout << "mode,fraction,top1\n";
            const frs::SweepResult res =
                frs::sweep_k(cfg, data, parse_fractions(fractions_csv), tc, &std::cout);
            write_text_file(out_path, res.to_csv());
        }
    } catch (const frs::IoFamilyError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const frs::ContractFamilyError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
