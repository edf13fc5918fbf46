#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "json.hpp"

#include "isct/binary_io.hpp"
#include "isct/checkpoint.hpp"
#include "isct/cli.hpp"
#include "isct/dataset.hpp"
#include "isct/error.hpp"
#include "isct/manifest.hpp"
#include "isct/signature.hpp"

namespace isct {
namespace {

namespace fs = std::filesystem;

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "isct");
    std::ostringstream out;
    std::ostringstream err;
    Run r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("isct_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        ::setenv("ISCT_OUT_DIR", dir_.c_str(), 1);
    }
    void TearDown() override { ::unsetenv("ISCT_OUT_DIR"); }

    std::string file(const std::string& name, const std::string& text) const {
        write_file(dir_ / name, text);
        return (dir_ / name).string();
    }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    fs::path dir_;
};

// --- parsing helpers -------------------------------------------------------

TEST(PathText, SeparatorsCommentsAndHeader) {
    const auto p = parse_path_text("x,y\n# note\n0,0\n1;0\n1 1\n");
    ASSERT_EQ(p.num_points(), 3u);
    EXPECT_EQ(p.dim(), 2);
    EXPECT_EQ(p.point(2)[1], 1.0);
    EXPECT_EQ(parse_path_text("1\t2\t3\n").dim(), 3);
}

TEST(PathText, Errors) {
    EXPECT_THROW(parse_path_text(""), ParseError);
    EXPECT_THROW(parse_path_text("# only a comment\n"), ParseError);
    EXPECT_THROW(parse_path_text("0,0\n1\n"), ParseError);
    EXPECT_THROW(parse_path_text("0,0\n1,zz\n"), ParseError);
}

TEST(ChannelList, Parses) {
    EXPECT_EQ(parse_channel_list("0,1;2,3").groups, (std::vector<std::vector<int>>{{0, 1}, {2, 3}}));
    EXPECT_EQ(parse_channel_list("2").groups, (std::vector<std::vector<int>>{{2}}));
    EXPECT_THROW(parse_channel_list("0,,1"), ParseError);
    EXPECT_THROW(parse_channel_list("a"), ParseError);
    EXPECT_THROW(parse_channel_list(""), ParseError);
}

// --- sig -------------------------------------------------------------------

TEST_F(CliTest, SigLPath) {
    const auto in = file("l.csv", "0,0\n1,0\n1,1\n");
    auto r = run({"sig", "--input", in, "--depth", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("level 2: 0.5 1 0 0.5\n"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("level 1: 1 1\n"), std::string::npos);
    EXPECT_NE(r.out.find("level\toffset\tsize\n"), std::string::npos);
    EXPECT_NE(r.out.find("flat: 1 1 1 0.5 1 0 0.5\n"), std::string::npos);

    r = run({"sig", "--input", in, "--depth", "2", "--strict"});
    ASSERT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("level 2: 0 1 0 0\n"), std::string::npos) << r.out;
}

TEST_F(CliTest, SigMatchesLibraryAndWritesManifest) {
    const auto in = file("p.txt", "0 0 0\n0.5 -1 2\n1 0.25 0\n-1 3 1\n");
    const auto out = path("sig.txt");
    const auto r = run({"sig", "--input", in, "--depth", "3", "--output", out});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_file(out), r.out);
    const auto sig = signature_batch(parse_path_text(read_file(in)), 3);
    EXPECT_EQ(r.out, format_signature(sig, "chen", 3));
    const auto m = nlohmann::json::parse(read_file(out + ".manifest.json"));
    EXPECT_EQ(m.at("command"), "sig");
    EXPECT_EQ(m.at("outputs").at(0).at("sha256"), sha256_hex(r.out));
}

TEST_F(CliTest, SigIscPrintsPerStepRows) {
    const auto in = file("l.csv", "0,0,0\n1,0,0\n1,1,1\n");
    const auto r = run({"sig", "--input", in, "--depth", "2", "--isc", "--channels", "0,1;2"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("step\tgroup\tvalues"), std::string::npos) << r.out;
}

TEST_F(CliTest, SigErrorsMapToExitCodes) {
    EXPECT_EQ(run({"sig", "--input", file("e.csv", "")}).code, kExitIo);
    EXPECT_EQ(run({"sig", "--input", path("missing.csv")}).code, kExitIo);
    EXPECT_EQ(run({"sig"}).code, kExitUsage);
    EXPECT_EQ(run({"sig", "--input", file("a.csv", "0,0\n1,1\n"), "--depth", "x"}).code, kExitUsage);
    EXPECT_EQ(run({"nosuch"}).code, kExitUsage);
    EXPECT_EQ(run({"--help"}).code, kExitOk);
}

// --- verify / fit / bench ---------------------------------------------------

TEST_F(CliTest, VerifySuitesPass) {
    for (const auto* suite : {"chen", "decay", "stream", "reparam", "fit"}) {
        const auto r = run({"verify", "--suite", suite, "--trials", "100", "--seed", "3"});
        EXPECT_EQ(r.code, 0) << suite << "\n" << r.out << r.err;
        EXPECT_NE(r.out.find("PASS"), std::string::npos);
    }
    EXPECT_EQ(run({"verify", "--suite", "bogus"}).code, kExitUsage);
}

TEST_F(CliTest, FitReportsDepthTwoExact) {
    const auto r = run({"fit", "--loops", "50", "--depth", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("\n2\t"), std::string::npos) << r.out;
}

TEST_F(CliTest, BenchSmallRun) {
    const auto r = run({"bench", "--steps", "2000", "--repeats", "3"});
    EXPECT_NE(r.out.find("stream_flat_within_2x"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("recompute_slope_positive"), std::string::npos);
    EXPECT_EQ(r.code, r.out.find("FAIL") == std::string::npos ? 0 : 1);
    EXPECT_EQ(run({"bench", "--steps", "0"}).code, kExitUsage);
}

// --- gen-data / train / eval -----------------------------------------------

TEST_F(CliTest, GenDataVariants) {
    auto r = run({"gen-data", "--maze", "u", "--episodes", "200", "--noise", "0.3", "--seed", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto base = load_dataset(dir_ / "dataset_umaze.isd");
    EXPECT_EQ(base.size(), 200u);
    EXPECT_TRUE(fs::exists(dir_ / "dataset_umaze.isd.manifest.json"));

    r = run({"gen-data", "--episodes", "200", "--seed", "1", "--delayed", "--output", path("d.isd")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto delayed = load_dataset(path("d.isd"));
    for (const auto& t : delayed.trajectories())
        for (std::size_t i = 0; i + 1 < t.rewards.size(); ++i) EXPECT_EQ(t.rewards[i], 0.0);

    r = run({"gen-data", "--episodes", "200", "--seed", "1", "--downgrade", "20", "--output", path("g.isd")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto down = load_dataset(path("g.isd"));
    EXPECT_EQ(down.size(), 160u);
    double kept_max = -1e300;
    for (const auto& t : down.trajectories()) kept_max = std::max(kept_max, t.episode_return());
    double base_max = -1e300;
    for (const auto& t : base.trajectories()) base_max = std::max(base_max, t.episode_return());
    EXPECT_LE(kept_max, base_max);

    EXPECT_EQ(run({"gen-data", "--episodes", "0"}).code, kExitUsage);
    EXPECT_EQ(run({"gen-data", "--maze", path("nomaze.txt")}).code, kExitIo);
    EXPECT_EQ(run({"gen-data", "--maze", "q"}).code, kExitUsage);
}

TEST_F(CliTest, ArtifactsAreByteIdenticalOnRerun) {
    ASSERT_EQ(run({"gen-data", "--episodes", "30", "--seed", "4", "--output", path("a.isd")}).code, 0);
    const auto first = read_file(path("a.isd"));
    const auto first_m = read_file(path("a.isd.manifest.json"));
    ASSERT_EQ(run({"gen-data", "--episodes", "30", "--seed", "4", "--output", path("a.isd")}).code, 0);
    EXPECT_EQ(read_file(path("a.isd")), first);
    EXPECT_EQ(read_file(path("a.isd.manifest.json")), first_m);

    const std::vector<std::string> train = {"train",   "--data",        path("a.isd"), "--epochs", "2",
                                            "--max-batches", "5", "--output", path("m.ckpt")};
    ASSERT_EQ(run(train).code, 0);
    const auto ck = read_file(path("m.ckpt"));
    const auto loss = read_file(path("m.ckpt.loss.tsv"));
    ASSERT_EQ(run(train).code, 0);
    EXPECT_EQ(read_file(path("m.ckpt")), ck);
    EXPECT_EQ(read_file(path("m.ckpt.loss.tsv")), loss);

    const std::vector<std::string> ev = {"eval", "--ckpt", path("m.ckpt"), "--episodes", "3", "--output", path("e")};
    ASSERT_EQ(run(ev).code, 0);
    const auto rep = read_file(path("e.report.tsv"));
    const auto curves = read_file(path("e.curves.tsv"));
    ASSERT_EQ(run(ev).code, 0);
    EXPECT_EQ(read_file(path("e.report.tsv")), rep);
    EXPECT_EQ(read_file(path("e.curves.tsv")), curves);
}

TEST_F(CliTest, TrainDeskSmokeLossFalls) {
    ASSERT_EQ(run({"gen-data", "--episodes", "200", "--seed", "2"}).code, 0);
    const auto r = run({"train", "--data", path("dataset_umaze.isd"), "--epochs", "4", "--max-batches", "15"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir_ / "model_isc.ckpt"));
    std::istringstream loss(read_file(dir_ / "model_isc.ckpt.loss.tsv"));
    std::string line;
    std::getline(loss, line);
    EXPECT_EQ(line, "epoch\tmean_loss\tlearning_rate\tmean_grad_norm\tbatches");
    std::vector<double> losses;
    while (std::getline(loss, line)) losses.push_back(std::stod(line.substr(line.find('\t') + 1)));
    ASSERT_EQ(losses.size(), 4u);
    EXPECT_LT(losses.back(), losses.front());
    const auto ck = load_checkpoint(dir_ / "model_isc.ckpt");
    EXPECT_EQ(ck.metadata.at("profile"), "desk");
}

TEST_F(CliTest, FullSignatureLayoutInManifest) {
    ASSERT_EQ(run({"gen-data", "--episodes", "20", "--seed", "2"}).code, 0);
    const auto r = run({"train", "--data", path("dataset_umaze.isd"), "--mode", "full_signature", "--epochs", "1",
                        "--max-batches", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto m = nlohmann::json::parse(read_file(dir_ / "model_full_signature.ckpt.manifest.json"));
    const std::string layout = m.at("config").at("layout_text");
    EXPECT_EQ(layout.find("slot inc"), std::string::npos) << layout;
    EXPECT_EQ(layout.find("slot cross"), std::string::npos) << layout;
    std::size_t sig_lines = 0;
    std::istringstream in(layout);
    std::string line;
    while (std::getline(in, line))
        if (line.rfind("slot sig ", 0) == 0) ++sig_lines;
    EXPECT_EQ(sig_lines, 1u) << layout;
}

TEST_F(CliTest, TrainErrors) {
    ASSERT_EQ(run({"gen-data", "--episodes", "5", "--seed", "2"}).code, 0);
    EXPECT_EQ(run({"train", "--data", path("dataset_umaze.isd"), "--mode", "fourier"}).code, kExitUsage);
    EXPECT_EQ(run({"train", "--data", path("dataset_umaze.isd"), "--profile", "laptop"}).code, kExitUsage);
    EXPECT_EQ(run({"train", "--data", path("none.isd")}).code, kExitIo);
    write_file(dir_ / "bad.isd", "garbage");
    EXPECT_EQ(run({"train", "--data", path("bad.isd")}).code, kExitIo);
}

TEST_F(CliTest, EvalZeroEpisodesAndMismatch) {
    ASSERT_EQ(run({"gen-data", "--episodes", "20", "--seed", "2"}).code, 0);
    ASSERT_EQ(run({"train", "--data", path("dataset_umaze.isd"), "--epochs", "1", "--max-batches", "2"}).code, 0);
    auto r = run({"eval", "--ckpt", path("model_isc.ckpt"), "--episodes", "0"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("episodes\t0"), std::string::npos) << r.out;
    EXPECT_EQ(read_file(dir_ / "eval_umaze.curves.tsv"), "episode\tstep\tdistance\n");

    auto ck = load_checkpoint(dir_ / "model_isc.ckpt");
    ck.model.state_dim = 6;
    save_checkpoint(ck, dir_ / "six.ckpt");
    r = run({"eval", "--ckpt", path("six.ckpt"), "--episodes", "1"});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_NE(r.err.find("state_dim"), std::string::npos) << r.err;

    EXPECT_EQ(run({"eval", "--ckpt", path("none.ckpt")}).code, kExitIo);
    EXPECT_EQ(run({"eval", "--ckpt", path("model_isc.ckpt"), "--episodes", "-1"}).code, kExitUsage);
}

TEST_F(CliTest, TrainDivergenceExitsWithFailureAndKeepsLossFile) {
    auto ds = collect_dataset(builtin_maze("u"), CollectorConfig{}, 5, 1);
    auto trajs = ds.trajectories();
    for (auto& t : trajs)
        for (auto& a : t.actions) a = 1e200;
    save_dataset(Dataset(trajs, nlohmann::json::object()), dir_ / "huge.isd");
    const auto r = run({"train", "--data", path("huge.isd"), "--epochs", "1", "--max-batches", "2"});
    EXPECT_EQ(r.code, kExitFailure) << r.out << r.err;
    EXPECT_TRUE(fs::exists(dir_ / "model_isc.ckpt.loss.tsv"));
    EXPECT_FALSE(fs::exists(dir_ / "model_isc.ckpt"));
}

}  // namespace
}  // namespace isct
