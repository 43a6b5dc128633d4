#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "g2d/model.hpp"

using namespace g2d;

namespace {

ModelConfig small_config() {
    ModelConfig mc;
    mc.img_hw = 32;
    mc.enc_channels = {4, 8};
    mc.text_dim = 8;
    mc.proj_dim = 16;
    mc.attn_heads = 3;
    mc.attn_head_dim = 4;
    mc.seed = 9;
    return mc;
}

Tensor random_image(int hw, Rng& rng) { return Tensor::uniform({1, hw, hw}, 0.0, 1.0, rng); }

void zero_params_with_prefix(Model& m, const std::string& prefix) {
    for (auto& [name, p] : m.params()) {
        if (name.rfind(prefix, 0) == 0) {
            for (double& v : p.mutable_data()) v = 0.0;
        }
    }
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig mc;
    mc.img_hw = 30;  // not divisible by 4
    CHECK_THROWS_AS(mc.validate(), ModelError);
    mc = ModelConfig{};
    mc.attn_heads = 0;
    CHECK_THROWS_AS(mc.validate(), ModelError);
    mc = ModelConfig{};
    mc.proj_dim = 1;
    CHECK_THROWS_AS(mc.validate(), ModelError);
    CHECK(ModelConfig{}.proj_dim == 128);
    CHECK(ModelConfig{}.attn_heads == 3);
}

TEST_CASE("encode_image shape and zero-weight behavior") {
    Model m = Model::init(ModelConfig{});
    Rng rng(1);
    Tensor img = random_image(32, rng);
    auto enc = m.encode_image(img);
    CHECK(enc.features.values.shape() == std::vector<int>{32, 8, 8});
    CHECK(enc.stage_outputs.size() == 2);
    CHECK(enc.skips().size() == 1);

    zero_params_with_prefix(m, "enc.");
    auto zero_enc = m.encode_image(Tensor::zeros({1, 32, 32}));
    for (double v : zero_enc.features.values.data()) CHECK(v == 0.0);

    CHECK_THROWS_AS(m.encode_image(Tensor::full({1, 32, 32}, 1.5)), ModelError);
    CHECK_THROWS_AS(m.encode_image(Tensor::zeros({1, 16, 16})), ModelError);
}

TEST_CASE("encoders are pure functions") {
    Model m = Model::init(small_config());
    Rng rng(2);
    Tensor img = random_image(32, rng);
    auto a = m.encode_image(img).features.values;
    auto b = m.encode_image(img).features.values;
    REQUIRE(a.numel() == b.numel());
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);

    std::vector<std::uint32_t> toks{3, 7, 15};
    auto t1 = m.encode_text(toks, 0);
    auto t2 = m.encode_text(toks, 0);
    for (std::size_t i = 0; i < t1.numel(); ++i) CHECK(t1.data()[i] == t2.data()[i]);
}

TEST_CASE("attention maps are per-head distributions") {
    Model m = Model::init(small_config());
    Rng rng(3);
    auto enc = m.encode_image(random_image(32, rng));
    auto pooled = m.attention_pool(enc.features);
    const auto& shape = pooled.attention.per_head.shape();
    CHECK(shape == std::vector<int>{3, 8, 8});
    for (int h = 0; h < 3; ++h) {
        double s = 0;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                const double v = pooled.attention.per_head.at({h, y, x});
                CHECK(v >= 0.0);
                s += v;
            }
        CHECK(std::abs(s - 1.0) <= 1e-9);
    }
    CHECK(pooled.pooled.shape() == std::vector<int>{8});
}

TEST_CASE("identical pixel embeddings give uniform attention") {
    ModelConfig mc = small_config();
    Model m = Model::init(mc);
    // constant feature map and zeroed positions make all tokens identical
    zero_params_with_prefix(m, "attn.pos");
    DenseFeatureMap feat{Tensor::full({8, 8, 8}, 0.3)};
    auto pooled = m.attention_pool(feat);
    for (double v : pooled.attention.per_head.data()) {
        CHECK(v == doctest::Approx(1.0 / 64).epsilon(1e-12));
    }
}

TEST_CASE("single-head pooled output equals the attention-weighted token mean") {
    ModelConfig mc = small_config();
    mc.attn_heads = 1;
    mc.attn_head_dim = mc.feat_channels();  // so Wv and Wo can be identities
    Model m = Model::init(mc);
    const int c = mc.feat_channels();
    auto set_identity = [&](const std::string& name) {
        auto d = m.params().at(name).mutable_data();
        std::fill(d.begin(), d.end(), 0.0);
        for (int i = 0; i < c; ++i) d[i * c + i] = 1.0;
    };
    set_identity("attn.h0.wv");
    set_identity("attn.wo");
    for (double& v : m.params().at("attn.bo").mutable_data()) v = 0.0;

    Rng rng(4);
    auto enc = m.encode_image(random_image(32, rng));
    auto pooled = m.attention_pool(enc.features);

    // direct weighted-sum oracle over tokens = pixel embeddings + positions
    Tensor tokens = add(transpose(reshape(enc.features.values, {c, 64})),
                        m.params().at("attn.pos"));
    std::vector<double> expect(c, 0.0);
    for (int p = 0; p < 64; ++p) {
        const double w = pooled.attention.per_head.data()[p];
        for (int i = 0; i < c; ++i) expect[i] += w * tokens.at({p, i});
    }
    for (int i = 0; i < c; ++i) {
        CHECK(pooled.pooled.data()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("permuting head parameter blocks permutes attention rows") {
    ModelConfig mc = small_config();
    Model m = Model::init(mc);
    Rng rng(5);
    Tensor img = random_image(32, rng);
    auto before = m.attention_pool(m.encode_image(img).features).attention.per_head;

    for (const char* wn : {"wq", "wk", "wv"}) {
        auto a = m.params().at(std::string("attn.h0.") + wn).mutable_data();
        auto b = m.params().at(std::string("attn.h2.") + wn).mutable_data();
        for (std::size_t i = 0; i < a.size(); ++i) std::swap(a[i], b[i]);
    }
    auto after = m.attention_pool(m.encode_image(img).features).attention.per_head;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            CHECK(after.at({0, y, x}) == before.at({2, y, x}));
            CHECK(after.at({2, y, x}) == before.at({0, y, x}));
            CHECK(after.at({1, y, x}) == before.at({1, y, x}));
        }
}

TEST_CASE("encode_text positions, padding and errors") {
    ModelConfig mc = small_config();
    Model m = Model::init(mc);
    auto a = m.encode_text(std::vector<std::uint32_t>{3, 7}, 0);
    auto b = m.encode_text(std::vector<std::uint32_t>{7, 3}, 0);
    bool differ = false;
    for (std::size_t i = 0; i < a.numel(); ++i) differ = differ || a.data()[i] != b.data()[i];
    CHECK(differ);

    // pad ids drop out of the mean but positions of kept tokens matter
    auto c = m.encode_text(std::vector<std::uint32_t>{3, 0, 7}, 0);
    auto d = m.encode_text(std::vector<std::uint32_t>{3, 7, 0}, 0);
    bool differ2 = false;
    for (std::size_t i = 0; i < c.numel(); ++i) differ2 = differ2 || c.data()[i] != d.data()[i];
    CHECK(differ2);

    CHECK_THROWS_AS(m.encode_text(std::vector<std::uint32_t>{0, 0}, 0), ModelError);
    CHECK_THROWS_AS(m.encode_text(std::vector<std::uint32_t>{99}, 0), ModelError);
    CHECK_THROWS_AS(m.encode_text(std::vector<std::uint32_t>(9, 1), 0), ModelError);
    CHECK_THROWS_AS(m.encode_text(std::vector<std::uint32_t>{}, 0), ModelError);
}

TEST_CASE("projections are unit-norm") {
    Model m = Model::init(small_config());
    Rng rng(6);
    for (int t = 0; t < 4; ++t) {
        Tensor v = m.project_image(Tensor::uniform({8}, -1.0, 1.0, rng));
        double n = 0;
        for (double x : v.data()) n += x * x;
        CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-9);
    }
    Tensor l = m.project_text(Tensor::uniform({8}, -1.0, 1.0, rng));
    double n = 0;
    for (double x : l.data()) n += x * x;
    CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-9);
}

TEST_CASE("zero-norm projection input raises") {
    Model m = Model::init(small_config());
    zero_params_with_prefix(m, "proj_v.");
    CHECK_THROWS_AS(m.project_image(Tensor::full({8}, 0.5)), ModelError);
}

TEST_CASE("pixel-wise projection equals looping the projector") {
    ModelConfig mc = small_config();
    Model m = Model::init(mc);
    Rng rng(7);
    auto enc = m.encode_image(random_image(32, rng));
    Tensor grid = m.project_pixelwise(enc.features);
    CHECK(grid.shape() == std::vector<int>{mc.proj_dim, 8, 8});

    const int c = mc.feat_channels();
    Tensor tokens = transpose(reshape(enc.features.values, {c, 64}));
    for (int p = 0; p < 64; p += 13) {
        std::vector<double> pix(c);
        for (int i = 0; i < c; ++i) pix[i] = tokens.at({p, i});
        Tensor expect = m.project_image(Tensor::from_data({c}, pix));
        double norm = 0.0;
        for (int d = 0; d < mc.proj_dim; ++d) {
            const double got = grid.at({d, p / 8, p % 8});
            CHECK(got == expect.data()[d]);
            norm += got * got;
        }
        CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-9);
    }

    DenseFeatureMap constant{Tensor::full({c, 8, 8}, 0.25)};
    Tensor cgrid = m.project_pixelwise(constant);
    for (int d = 0; d < mc.proj_dim; ++d) {
        const double ref = cgrid.at({d, 0, 0});
        for (int p = 1; p < 64; ++p) CHECK(cgrid.at({d, p / 8, p % 8}) == ref);
    }
}

TEST_CASE("decode shape, range and skip validation") {
    ModelConfig mc = small_config();
    Model m = Model::init(mc);
    Rng rng(8);
    auto enc = m.encode_image(random_image(32, rng));
    Tensor out = m.decode(enc.features, enc.skips());
    CHECK(out.shape() == std::vector<int>{1, 32, 32});
    for (double v : out.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }

    CHECK_THROWS_AS(m.decode(enc.features, {}), ModelError);
    std::vector<Tensor> bad{Tensor::zeros({4, 8, 8})};
    CHECK_THROWS_AS(m.decode(enc.features, bad), ModelError);

    ModelConfig noskip = mc;
    noskip.decoder_skip = false;
    Model m2 = Model::init(noskip);
    auto enc2 = m2.encode_image(random_image(32, rng));
    Tensor out2 = m2.decode(enc2.features, {});
    CHECK(out2.shape() == std::vector<int>{1, 32, 32});
    CHECK_THROWS_AS(m2.decode(enc2.features, enc2.skips()), ModelError);
}

TEST_CASE("parameter table") {
    Model m = Model::init(small_config());
    CHECK(m.params().contains("enc.conv0.w"));
    CHECK(m.params().contains("dec.out.b"));
    CHECK_THROWS_AS(m.params().at("nope"), ModelError);
    // unique names by construction
    ParamTable t;
    t.add("a", Tensor::scalar(1.0));
    CHECK_THROWS_AS(t.add("a", Tensor::scalar(2.0)), ModelError);
}
