#include "udlflow/cli/cli.hpp"

#include "udlflow/error.hpp"
#include "udlflow/io/model_file.hpp"
#include "udlflow/verify/bench.hpp"
#include "udlflow/verify/property_file.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace udlflow::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

struct Globals {
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::string out_dir = "out";
};

class Session {
public:
    Session(const Globals& g, std::ostream& out, std::ostream& err) : g_(g), out_(out), err_(err)
    {
        if (const char* env = std::getenv("UDLFLOW_OUT"); env && *env) dir_ = env;
        else dir_ = g.out_dir;
    }

    fs::path path(const std::string& name) const { return dir_ / name; }

    void wrote(const fs::path& p) { out_ << "wrote " << p.string() << "\n"; }

    void write(const std::string& name, const std::string& text)
    {
        const fs::path p = path(name);
        io::write_text(p, text);
        wrote(p);
    }

    std::ostream& out() { return out_; }
    std::ostream& err() { return err_; }
    const Globals& globals() const { return g_; }

private:
    Globals g_;
    std::ostream& out_;
    std::ostream& err_;
    fs::path dir_;
};

// synth:<name>, idx:<images>[,<labels>] or a CSV file (a trailing "label" header column holds labels).
struct DataSource {
    std::string spec;
    std::size_t n = 2000;
    int digit = -1;
    std::size_t pool = 1;
    bool raw_pixels = false;
};

data::Dataset load_data(const DataSource& s, std::uint64_t seed)
{
    if (s.spec.rfind("synth:", 0) == 0) return data::synth(s.spec.substr(6), s.n, seed);
    if (s.spec.rfind("idx:", 0) == 0) {
        const std::string rest = s.spec.substr(4);
        const auto comma = rest.find(',');
        data::IdxOptions o;
        if (s.digit >= 0) o.class_filter = s.digit;
        o.downsample = s.pool;
        o.keep_integer = s.raw_pixels;
        return data::load_idx(rest.substr(0, comma), comma == std::string::npos ? "" : rest.substr(comma + 1), o);
    }
    std::ifstream in(s.spec);
    if (!in) throw IoError("cannot open data file '" + s.spec + "'");
    std::string header;
    std::getline(in, header);
    if (!header.empty() && header.back() == '\r') header.pop_back();
    std::optional<std::size_t> label;
    const auto pos = header.rfind(',');
    const std::string last = pos == std::string::npos ? header : header.substr(pos + 1);
    if (last == "label") label = static_cast<std::size_t>(std::count(header.begin(), header.end(), ','));
    return data::load_csv(s.spec, true, label);
}

std::vector<double> parse_list(const std::string& s)
{
    std::vector<double> v;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(cell, &used));
            if (used != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::exception&) {
            throw CLI::ValidationError("bad number '" + cell + "' in list '" + s + "'");
        }
    }
    return v;
}

void write_matrix_csv(std::ostream& o, const num::Tensor& t, const std::string& prefix)
{
    for (std::size_t j = 0; j < t.cols(); ++j) o << (j ? "," : "") << prefix << j;
    o << "\n";
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < t.cols(); ++j) o << (j ? "," : "") << fmt(t(i, j));
        o << "\n";
    }
}

// ---- verbs ----

struct TrainArgs {
    DataSource data;
    std::string kind = "flow";
    std::string arch = "veriflow";
    std::size_t blocks = 5, hidden_layers = 3, width = 0;
    double lr = 1e-3, lu_reg = 1e-4, val_fraction = 0.1;
    std::size_t patience = 3, batch = 16, epochs = 200;
    bool dequantize = false;
    std::string hidden = "16,16";
    std::string name;
};

int do_train(Session& s, const TrainArgs& a)
{
    const auto& g = s.globals();
    data::Dataset ds = load_data(a.data, g.seed);
    train::TrainConfig cfg;
    cfg.learning_rate = a.lr;
    cfg.patience = a.patience;
    cfg.batch_size = a.batch;
    cfg.max_epochs = a.epochs;
    cfg.lu_reg_weight = a.lu_reg;
    cfg.dequantize = a.dequantize;
    cfg.seed = g.seed;
    cfg.validation_fraction = a.val_fraction;
    cfg.threads = g.threads;

    if (a.kind == "classifier") {
        if (!ds.labels) throw ContractError("train --kind classifier needs labelled data");
        std::vector<std::size_t> sizes{ds.dim()};
        for (double h : parse_list(a.hidden)) sizes.push_back(static_cast<std::size_t>(h));
        const int classes = *std::max_element(ds.labels->begin(), ds.labels->end()) + 1;
        sizes.push_back(static_cast<std::size_t>(std::max(2, classes)));
        flows::ReluNetwork net(sizes, g.seed);
        const auto r = train::train_classifier(net, ds, cfg);
        s.out() << "accuracy=" << fmt(r.accuracy) << "\n";
        const std::string name = a.name.empty() ? "classifier" : a.name;
        io::save(net, s.path(name + ".json"));
        s.wrote(s.path(name + ".json"));
        return kOk;
    }
    if (a.kind != "flow") throw CLI::ValidationError("--kind must be flow or classifier");

    std::optional<flows::ImageShape> image;
    if (ds.sample_shape.size() == 3) image = flows::ImageShape{ds.sample_shape[0], ds.sample_shape[1], ds.sample_shape[2]};
    const std::size_t d = ds.dim();
    flows::FlowConfig fc;
    radial::RadialBase base = train::default_veriflow_base(d);
    if (a.arch == "veriflow") {
        fc.dim = d;
        fc.image = image;
        fc.seed = g.seed;
    } else if (a.arch == "baseline") {
        fc = train::baseline_architecture(d, image, g.seed);
        base = train::standard_normal_base(d);
    } else {
        throw CLI::ValidationError("--arch must be veriflow or baseline");
    }
    fc.blocks = a.blocks;
    fc.hidden_layers = a.hidden_layers;
    fc.hidden_width = a.width;
    auto model = flows::FlowModel::build(fc, std::move(base));
    const auto r = train::train(model, ds, cfg);
    s.out() << "initial_val_nll=" << fmt(r.initial_val_nll) << " best_val_nll=" << fmt(r.best_val_nll)
            << " best_epoch=" << r.best_epoch << (r.diverged ? " diverged" : "") << "\n";
    if (!r.message.empty()) s.out() << r.message << "\n";

    const std::string name = a.name.empty() ? "model" : a.name;
    io::save(model, s.path(name + ".json"));
    s.wrote(s.path(name + ".json"));
    std::ostringstream hist;
    train::write_history_csv(hist, r.history);
    s.write(name + "_history.csv", hist.str());
    s.write(name + "_history.svg", history_svg(r.history));
    return kOk;
}

struct ModelArgs {
    std::string model, classifier;
};

struct RegionArgs {
    std::string mode = "global";
    std::string region = "box";
    double q = 0.9;
    bool q_set = false;
    double eps = 0.001;
    double box_side = 0.05;
    std::string point;
    std::size_t cls = 0;
    double tau = 0.0;
    std::string calibrate;
};

verify::LatentRegion make_region(Session& s, const flows::FlowModel& flow, const RegionArgs& a)
{
    if (a.region == "udl") {
        std::optional<valcal::Calibration> cal;
        if (!a.calibrate.empty()) {
            DataSource src;
            src.spec = a.calibrate;
            cal = valcal::recalibrate(flow, load_data(src, s.globals().seed), {a.q});
        }
        return verify::latent_udl_region(flow, a.q, flow.base().order(), cal);
    }
    if (a.region != "box") throw CLI::ValidationError("--region must be box or udl");
    verify::LatentRegion r = verify::small_box_region(flow.dim(), a.box_side);
    if (a.q_set) {
        r.q = a.q;
        std::vector<double> corner(flow.dim(), a.box_side / 2.0);
        if (radial::norm(corner, flow.base().order()) >= flow.base().udl_radius(a.q))
            s.err() << "warning: the latent box reaches outside the level set at q=" << fmt(a.q) << "\n";
    }
    return r;
}

verify::VerificationTask make_task(Session& s, const ModelArgs& m, const RegionArgs& a)
{
    const auto net = io::load_classifier(m.classifier);
    if (a.mode == "local") {
        std::vector<double> x = parse_list(a.point);
        if (x.empty()) throw CLI::ValidationError("--mode local needs --point");
        return verify::make_local_task(net, std::move(x), a.eps);
    }
    if (m.model.empty()) throw CLI::ValidationError("--mode " + a.mode + " needs --model");
    const auto flow = io::load_flow(m.model);
    auto region = make_region(s, flow, a);
    if (a.mode == "global") return verify::make_global_task(flow, net, std::move(region), a.eps);
    if (a.mode == "confidence") return verify::make_confidence_task(flow, net, std::move(region), a.cls, a.tau);
    throw CLI::ValidationError("--mode must be global, local or confidence");
}

struct VerifyArgs {
    ModelArgs models;
    RegionArgs region;
    std::int64_t budget = 20000;
    std::string name = "verdict";
};

int do_verify(Session& s, const VerifyArgs& a)
{
    const auto task = make_task(s, a.models, a.region);
    verify::VerifyOptions o;
    o.budget = a.budget;
    o.seed = s.globals().seed;
    o.threads = s.globals().threads;
    const auto v = verify::verify(task, o);
    s.out() << "verdict=" << verify::to_string(v.status) << " nodes=" << v.nodes << " seconds=" << fmt(v.seconds) << "\n";
    std::ostringstream rep;
    rep << "mode=" << verify::to_string(task.property.kind) << "\n"
        << "epsilon=" << fmt(task.property.epsilon) << "\n"
        << "verdict=" << verify::to_string(v.status) << "\n"
        << "nodes=" << v.nodes << "\n"
        << "message=" << v.message << "\n";
    s.write(a.name + ".txt", rep.str());
    if (v.status == verify::Status::falsified) {
        std::ostringstream cex;
        write_matrix_csv(cex, num::Tensor({1, v.counterexample.size()}, v.counterexample), "u");
        s.write(a.name + "_counterexample.csv", cex.str());
        return kFalsified;
    }
    return kOk;
}

int do_export(Session& s, const VerifyArgs& a)
{
    const auto task = make_task(s, a.models, a.region);
    const auto files = verify::export_spec(task, s.path(""), a.name);
    s.wrote(files.property);
    s.wrote(files.model);
    return kOk;
}

struct BenchArgs {
    ModelArgs models;
    double eps_verify = 0.001, eps_falsify = 0.1, box_side = 0.05;
    std::size_t instances = 20;
    std::int64_t budget = 20000;
    std::string name = "bench";
};

int do_bench(Session& s, const BenchArgs& a)
{
    const auto flow = io::load_flow(a.models.model);
    const auto net = io::load_classifier(a.models.classifier);
    verify::BenchOptions o;
    o.eps_verify = a.eps_verify;
    o.eps_falsify = a.eps_falsify;
    o.instances = a.instances;
    o.region = verify::small_box_region(flow.dim(), a.box_side);
    o.verify.budget = a.budget;
    o.verify.seed = s.globals().seed;
    o.verify.threads = s.globals().threads;
    o.seed = s.globals().seed;
    const auto res = verify::bench_robustness(flow, net, o);
    for (double eps : {a.eps_verify, a.eps_falsify}) {
        const auto c = verify::crossover(res.rows, eps);
        s.out() << "epsilon=" << fmt(eps) << " crossover=" << (c ? std::to_string(*c) : "none") << "\n";
    }
    std::ostringstream csv;
    verify::write_bench_csv(csv, res.rows);
    s.write(a.name + ".csv", csv.str());
    return kOk;
}

int do_sample(Session& s, const std::string& model, std::size_t n, const std::string& name)
{
    const auto flow = io::load_flow(model);
    std::ostringstream csv;
    write_matrix_csv(csv, flow.sample(n, s.globals().seed), "x");
    s.write(name + ".csv", csv.str());
    return kOk;
}

int do_logprob(Session& s, const std::string& model, const DataSource& src, const std::string& name)
{
    const auto flow = io::load_flow(model);
    const auto ds = load_data(src, s.globals().seed);
    const auto lp = flow.log_prob(ds.samples);
    std::ostringstream csv;
    csv << "log_prob\n";
    for (double v : lp.values()) csv << fmt(v) << "\n";
    s.write(name + ".csv", csv.str());
    return kOk;
}

int do_validate(Session& s, const std::string& model, const DataSource& src, double alpha, std::size_t perms,
                const std::string& name)
{
    const auto flow = io::load_flow(model);
    const auto ds = load_data(src, s.globals().seed);
    valcal::ValidationOptions o;
    o.alpha = alpha;
    o.permutations = perms;
    o.seed = s.globals().seed;
    const auto rep = valcal::validate(flow, ds, o);
    s.out() << "verdict=" << valcal::to_string(rep.verdict) << " ks_p=" << fmt(rep.ks.p)
            << " energy_p=" << fmt(rep.energy.p) << "\n";
    std::ostringstream kv, csv, pp;
    valcal::write_key_value(kv, rep);
    valcal::write_csv(csv, rep);
    s.write(name + ".txt", kv.str());
    s.write(name + ".csv", csv.str());
    const auto latents = flow.inverse(ds.samples);
    const auto points = valcal::pp_plot_data(latents, flow.base(), 101);
    valcal::write_pp_csv(pp, points);
    s.write(name + "_pp.csv", pp.str());
    s.write(name + "_pp.svg", pp_svg(points, "PP plot of latent norms"));
    return kOk;
}

int do_synth(Session& s, const std::string& name, std::size_t n, const std::string& file)
{
    const auto ds = data::synth(name, n, s.globals().seed);
    const fs::path p = s.path(file.empty() ? name + ".csv" : file);
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    data::save_csv(p.string(), ds);
    s.wrote(p);
    return kOk;
}

} // namespace

std::string pp_svg(const std::vector<valcal::PPPoint>& points, const std::string& title)
{
    const double size = 360.0, pad = 40.0;
    auto px = [&](double v) { return fmt(pad + v * size); };
    auto py = [&](double v) { return fmt(pad + (1.0 - v) * size); };
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"440\" height=\"440\" viewBox=\"0 0 440 440\">\n"
      << "<rect width=\"440\" height=\"440\" fill=\"white\"/>\n"
      << "<text x=\"220\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" << title
      << "</text>\n"
      << "<rect x=\"40\" y=\"40\" width=\"360\" height=\"360\" fill=\"none\" stroke=\"black\"/>\n"
      << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
      << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n"
      << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : points) o << px(p.model) << "," << py(p.empirical) << " ";
    o << "\"/>\n";
    for (const auto& p : points)
        o << "<circle cx=\"" << px(p.model) << "\" cy=\"" << py(p.empirical) << "\" r=\"1.5\" fill=\"steelblue\"/>\n";
    o << "<text x=\"220\" y=\"430\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">model CDF</text>\n"
      << "<text x=\"14\" y=\"220\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
         "transform=\"rotate(-90 14 220)\">empirical CDF</text>\n"
      << "</svg>\n";
    return o.str();
}

std::string history_svg(const std::vector<train::EpochRecord>& history)
{
    double lo = 1e300, hi = -1e300;
    for (const auto& r : history) {
        lo = std::min({lo, r.train_nll, r.val_nll});
        hi = std::max({hi, r.train_nll, r.val_nll});
    }
    if (history.empty()) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) hi = lo + 1.0;
    const double n = std::max<double>(1.0, static_cast<double>(history.size()) - 1.0);
    auto px = [&](std::size_t i) { return fmt(40.0 + 360.0 * static_cast<double>(i) / n); };
    auto py = [&](double v) { return fmt(40.0 + 220.0 * (hi - v) / (hi - lo)); };
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"440\" height=\"320\" viewBox=\"0 0 440 320\">\n"
      << "<rect width=\"440\" height=\"320\" fill=\"white\"/>\n"
      << "<rect x=\"40\" y=\"40\" width=\"360\" height=\"220\" fill=\"none\" stroke=\"black\"/>\n"
      << "<text x=\"220\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">NLL per epoch "
         "(train blue, validation orange)</text>\n";
    for (int series = 0; series < 2; ++series) {
        o << "<polyline fill=\"none\" stroke=\"" << (series ? "darkorange" : "steelblue") << "\" points=\"";
        for (std::size_t i = 0; i < history.size(); ++i)
            o << px(i) << "," << py(series ? history[i].val_nll : history[i].train_nll) << " ";
        o << "\"/>\n";
    }
    o << "<text x=\"36\" y=\"44\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fmt(hi)
      << "</text>\n"
      << "<text x=\"36\" y=\"260\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fmt(lo)
      << "</text>\n"
      << "<text x=\"220\" y=\"290\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch</text>\n"
      << "</svg>\n";
    return o.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"level-set flows, latent validation and robustness verification", "udlflow"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "random seed")->capture_default_str();
    app.add_option("--threads", g.threads, "worker threads for training and verification")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--out-dir", g.out_dir, "artifact directory (UDLFLOW_OUT overrides)")->capture_default_str();

    auto add_data = [](CLI::App* c, DataSource& d, bool required) {
        auto* o = c->add_option("--data", d.spec, "synth:<name>, idx:<images>[,<labels>] or a CSV file");
        if (required) o->required();
        c->add_option("--n", d.n, "sample count for synthetic data")->capture_default_str();
        c->add_option("--digit", d.digit, "IDX class filter");
        c->add_option("--pool", d.pool, "IDX mean-pooling factor")->capture_default_str();
        c->add_flag("--raw-pixels", d.raw_pixels, "keep IDX pixels in [0, 255]");
    };

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train a flow or a classifier");
    add_data(train, ta.data, true);
    train->add_option("--kind", ta.kind, "flow or classifier")->capture_default_str();
    train->add_option("--arch", ta.arch, "veriflow or baseline")->capture_default_str();
    train->add_option("--blocks", ta.blocks)->capture_default_str();
    train->add_option("--hidden-layers", ta.hidden_layers)->capture_default_str();
    train->add_option("--width", ta.width, "conditioner width, 0 for max(8, 2d)")->capture_default_str();
    train->add_option("--lr", ta.lr)->capture_default_str();
    train->add_option("--patience", ta.patience)->capture_default_str();
    train->add_option("--batch", ta.batch)->capture_default_str();
    train->add_option("--epochs", ta.epochs)->capture_default_str();
    train->add_option("--lu-reg", ta.lu_reg)->capture_default_str();
    train->add_option("--val-fraction", ta.val_fraction)->capture_default_str();
    train->add_flag("--dequantize", ta.dequantize, "uniform dequantization of integer pixels");
    train->add_option("--hidden", ta.hidden, "classifier hidden widths")->capture_default_str();
    train->add_option("--name", ta.name, "artifact stem");

    std::string model_path, sample_name = "samples", lp_name = "logprob", val_name = "validation";
    std::size_t sample_n = 1000;
    auto* sample = app.add_subcommand("sample", "draw samples from a flow");
    sample->add_option("--model", model_path)->required();
    sample->add_option("--n", sample_n)->capture_default_str();
    sample->add_option("--name", sample_name)->capture_default_str();

    DataSource lp_data;
    auto* logprob = app.add_subcommand("logprob", "log densities of data rows");
    logprob->add_option("--model", model_path)->required();
    add_data(logprob, lp_data, true);
    logprob->add_option("--name", lp_name)->capture_default_str();

    DataSource val_data;
    double alpha = 0.05;
    std::size_t perms = 200;
    auto* validate = app.add_subcommand("validate", "goodness-of-fit tests of the latent codes");
    validate->add_option("--model", model_path)->required();
    add_data(validate, val_data, true);
    validate->add_option("--alpha", alpha)->capture_default_str();
    validate->add_option("--permutations", perms)->capture_default_str();
    validate->add_option("--name", val_name)->capture_default_str();

    auto add_task = [](CLI::App* c, VerifyArgs& v) {
        c->add_option("--model", v.models.model, "flow file (global and confidence modes)");
        c->add_option("--classifier", v.models.classifier)->required();
        c->add_option("--mode", v.region.mode, "global, local or confidence")->capture_default_str();
        c->add_option("--region", v.region.region, "box or udl")->capture_default_str();
        c->add_option("--q", v.region.q, "level-set probability")->capture_default_str();
        c->add_option("--eps", v.region.eps, "l_inf perturbation radius")->capture_default_str();
        c->add_option("--box-side", v.region.box_side, "side of the latent box")->capture_default_str();
        c->add_option("--point", v.region.point, "local mode centre, comma separated");
        c->add_option("--class", v.region.cls, "confidence mode class")->capture_default_str();
        c->add_option("--tau", v.region.tau, "confidence threshold")->capture_default_str();
        c->add_option("--calibrate", v.region.calibrate, "CSV data for recalibrating the udl radius");
        c->add_option("--budget", v.budget, "branch-and-bound nodes")->capture_default_str();
    };
    VerifyArgs va;
    auto* verify_cmd = app.add_subcommand("verify", "decide a robustness or confidence property");
    add_task(verify_cmd, va);
    verify_cmd->add_option("--name", va.name)->capture_default_str();
    VerifyArgs ea;
    ea.name = "property";
    auto* export_cmd = app.add_subcommand("export", "write a property file and its graph");
    add_task(export_cmd, ea);
    export_cmd->add_option("--name", ea.name)->capture_default_str();

    BenchArgs ba;
    auto* bench = app.add_subcommand("bench-robustness", "global versus per-instance verification times");
    bench->add_option("--model", ba.models.model)->required();
    bench->add_option("--classifier", ba.models.classifier)->required();
    bench->add_option("--eps-verify", ba.eps_verify)->capture_default_str();
    bench->add_option("--eps-falsify", ba.eps_falsify)->capture_default_str();
    bench->add_option("--instances", ba.instances)->capture_default_str();
    bench->add_option("--box-side", ba.box_side)->capture_default_str();
    bench->add_option("--budget", ba.budget)->capture_default_str();
    bench->add_option("--name", ba.name)->capture_default_str();

    std::string synth_name = "two-moons", synth_file;
    std::size_t synth_n = 2000;
    auto* synth = app.add_subcommand("synth-data", "write a synthetic dataset as CSV");
    synth->add_option("--name", synth_name)->check(CLI::IsMember(data::synth_names()))->capture_default_str();
    synth->add_option("--n", synth_n)->capture_default_str();
    synth->add_option("--file", synth_file, "file name under the output directory");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }
    va.region.q_set = verify_cmd->count("--q") > 0;
    ea.region.q_set = export_cmd->count("--q") > 0;

    Session s(g, out, err);
    try {
        if (*train) return do_train(s, ta);
        if (*sample) return do_sample(s, model_path, sample_n, sample_name);
        if (*logprob) return do_logprob(s, model_path, lp_data, lp_name);
        if (*validate) return do_validate(s, model_path, val_data, alpha, perms, val_name);
        if (*verify_cmd) return do_verify(s, va);
        if (*export_cmd) return do_export(s, ea);
        if (*bench) return do_bench(s, ba);
        if (*synth) return do_synth(s, synth_name, synth_n, synth_file);
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntime;
    }
    return kUsage;
}

int run(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

} // namespace udlflow::cli
