#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "rave/autograd.hpp"
#include "rave/dsp.hpp"
#include "rave/pqmf.hpp"

namespace rave {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
    int sample_rate = 16000;
    int bands = 8;       // PQMF band count M (1 disables the decomposition)
    int latent_dim = 32;
    int pqmf_taps = 0;   // 0 -> bank default (32 * bands)

    std::vector<int> encoder_hidden{32, 64, 128};
    std::vector<int> encoder_strides{4, 4, 2};
    // Widths along the decoder trunk: input width then one per upsampling
    // stage (stage ratios are the reversed encoder strides).
    std::vector<int> decoder_channels{256, 128, 64, 32};

    int noise_bands = 16;   // FIR amplitude bins per band = noise_bands + 1
    int noise_frame = 32;   // multiband samples per noise FIR frame

    int disc_scales = 3;
    int disc_in_kernel = 15;
    int disc_kernel = 21;
    int disc_stride = 4;
    std::vector<int> disc_channels{16, 64, 128, 128};
    std::vector<int> disc_groups{4, 16, 64};
    int disc_post_kernel = 0;  // optional full-width conv before the logit map
    int disc_out_kernel = 3;

    std::vector<int> spectral_scales{1024, 512, 256, 128};
    double leaky_slope = 0.2;
    double logvar_min = -14.0, logvar_max = 6.0;

    int stride_product() const;
    // Total downsampling between audio and latent frames: bands * prod(strides).
    int total_factor() const;
    double latent_frame_rate() const { return static_cast<double>(sample_rate) / total_factor(); }
    std::vector<int> decoder_ratios() const;  // reversed encoder strides
    void validate() const;

    // Small model for minutes-scale runs on one core.
    static ModelConfig desk();
    // 48 kHz / 16-band / 128-dim configuration from the reference setup.
    static ModelConfig full();
};

// Latent frames as plain data (posterior mean or samples), channel-major.
struct LatentFrames {
    int batch = 1;
    int dim = 0;
    int frames = 0;
    double frame_rate = 0.0;
    std::vector<float> values;  // [batch][dim][frames]

    float& at(int b, int d, int f) { return values[(static_cast<std::size_t>(b) * dim + d) * frames + f]; }
    float at(int b, int d, int f) const { return values[(static_cast<std::size_t>(b) * dim + d) * frames + f]; }
};

template <typename T>
struct Posterior {
    ag::Var<T> mu;      // [B, latent_dim, frames]
    ag::Var<T> logvar;  // clamped to [logvar_min, logvar_max]
};

template <typename T>
struct DiscriminatorOutput {
    std::vector<ag::Var<T>> logits;                 // one map per scale
    std::vector<std::vector<ag::Var<T>>> features;  // pre-logit maps per scale
};

// ---------------------------------------------------------------------------
// graph nodes that sit above the generic op set
// ---------------------------------------------------------------------------

// Differentiable PQMF synthesis: mb [B, M, S] -> audio [B, 1, S * M].
template <typename T>
ag::Var<T> pqmf_synth(ag::Tape<T>* tape, const ag::Var<T>& mb, const pqmf::Bank& bank);

// PQMF analysis as a constant (no gradient flows into the raw input).
template <typename T>
ag::Var<T> pqmf_analyze(const ag::Var<T>& audio, const pqmf::Bank& bank);

// Linear-phase FIR table: [taps x (noise_bands+1)] inverse real DFT of the bin
// amplitudes, Hann-windowed. Flat amplitudes give an exact unit impulse.
std::vector<double> noise_fir_table(int noise_bands);

// Filtered-noise synthesizer. amps [B, M*(bins), F] (already in [0,1]);
// each frame's per-band amplitude response becomes an FIR convolved with
// fresh white noise and overlap-added: out [B, M, F * noise_frame].
// Noise is drawn from Rng::substream keyed by (seed, batch, band, absolute
// frame index) so streaming and offline synthesis agree bit for bit.
template <typename T>
ag::Var<T> noise_fir_synth(ag::Tape<T>* tape, const ag::Var<T>& amps, int bands, int noise_bands,
                           int noise_frame, std::uint64_t seed, std::int64_t frame_offset);

std::uint64_t noise_stream_index(int batch, int band, std::int64_t frame);

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

template <typename T>
struct Conv {
    ag::Var<T> w, b;
    int stride = 1, dilation = 1, groups = 1, pad_left = 0;

    ag::Var<T> operator()(ag::Tape<T>* tape, const ag::Var<T>& x) const {
        return ag::conv1d(tape, x, w, b, stride, pad_left, 0, dilation, groups);
    }
};

template <typename T>
struct TConv {
    ag::Var<T> w, b;  // [Cin, Cout, K]
    int ratio = 1;

    ag::Var<T> operator()(ag::Tape<T>* tape, const ag::Var<T>& x) const {
        return ag::tconv1d(tape, x, w, b, ratio, 0, ratio * x->t);
    }
};

template <typename T>
struct BatchNorm {
    ag::Var<T> gamma, beta, rmean, rvar;

    ag::Var<T> operator()(ag::Tape<T>* tape, const ag::Var<T>& x, bool train) const {
        return ag::batch_norm(tape, x, gamma, beta, rmean, rvar, train);
    }
};

template <typename T>
struct ResidualUnit {
    Conv<T> c1, c2;  // dilated conv then 1-dilation conv, both kernel 3
};

template <typename T>
struct DecoderStage {
    TConv<T> up;
    std::vector<ResidualUnit<T>> units;
};

template <typename T>
struct DiscriminatorScale {
    Conv<T> in;
    std::vector<Conv<T>> strided;
    Conv<T> post;  // present when disc_post_kernel > 0
    bool has_post = false;
    Conv<T> out;
};

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

template <typename T>
class Model {
  public:
    Model(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const pqmf::Bank& bank() const { return bank_; }

    // x: audio batch [B, 1, len], len divisible by total_factor().
    Posterior<T> encode(ag::Tape<T>* tape, const ag::Var<T>& x, bool train);

    // z: [B, latent_dim, F] -> audio [B, 1, F * total_factor()].
    // frame_offset counts multiband samples already emitted (streaming).
    ag::Var<T> decode(ag::Tape<T>* tape, const ag::Var<T>& z, bool train,
                      std::uint64_t noise_seed, std::int64_t mb_frame_offset = 0);

    DiscriminatorOutput<T> discriminate(ag::Tape<T>* tape, const ag::Var<T>& audio);

    // Intermediate decode (multiband signal before PQMF synthesis); used by
    // the streaming engine tests.
    ag::Var<T> decode_multiband(ag::Tape<T>* tape, const ag::Var<T>& z, bool train,
                                std::uint64_t noise_seed, std::int64_t mb_frame_offset);

    std::vector<ag::Var<T>> encoder_params() const;
    std::vector<ag::Var<T>> decoder_params() const;
    std::vector<ag::Var<T>> discriminator_params() const;
    // Every trainable tensor plus batch-norm running buffers, with stable names.
    std::vector<std::pair<std::string, ag::Var<T>>> named_tensors() const;

    std::size_t param_count() const;
    std::size_t param_count_encoder() const;
    std::size_t param_count_decoder() const;
    std::size_t param_count_discriminator() const;

    // Layer access for the streaming engine.
    const std::vector<Conv<T>>& encoder_blocks() const { return enc_blocks_; }
    const std::vector<BatchNorm<T>>& encoder_norms() const { return enc_norms_; }
    const Conv<T>& head_mu() const { return head_mu_; }
    const Conv<T>& head_logvar() const { return head_lv_; }
    const Conv<T>& decoder_in() const { return dec_in_; }
    const std::vector<DecoderStage<T>>& decoder_stages() const { return dec_stages_; }
    const Conv<T>& wave_head() const { return wave_head_; }
    const Conv<T>& loud_head() const { return loud_head_; }
    const std::vector<Conv<T>>& noise_convs() const { return noise_convs_; }
    const Conv<T>& noise_out() const { return noise_out_; }

  private:
    ModelConfig cfg_;
    pqmf::Bank bank_;

    std::vector<Conv<T>> enc_blocks_;
    std::vector<BatchNorm<T>> enc_norms_;
    Conv<T> head_mu_, head_lv_;

    Conv<T> dec_in_;
    std::vector<DecoderStage<T>> dec_stages_;
    Conv<T> wave_head_, loud_head_;
    std::vector<Conv<T>> noise_convs_;
    Conv<T> noise_out_;

    std::vector<DiscriminatorScale<T>> disc_;

    void build(Rng& rng);
    ag::Var<T> decoder_trunk(ag::Tape<T>* tape, const ag::Var<T>& z);
};

// Mean over scales and layers of the mean absolute feature difference.
template <typename T>
ag::Var<T> feature_matching(ag::Tape<T>* tape, const DiscriminatorOutput<T>& real,
                            const DiscriminatorOutput<T>& fake);

// mean_scales[ mean(max(0, 1 - D(x))) + mean(max(0, 1 + D(xhat))) ]
template <typename T>
ag::Var<T> hinge_discriminator(ag::Tape<T>* tape, const std::vector<ag::Var<T>>& real_logits,
                               const std::vector<ag::Var<T>>& fake_logits);

// -mean over scales of the mean fake logit.
template <typename T>
ag::Var<T> hinge_generator(ag::Tape<T>* tape, const std::vector<ag::Var<T>>& fake_logits);

extern template class Model<float>;
extern template class Model<double>;
extern template ag::Var<float> pqmf_synth<float>(ag::Tape<float>*, const ag::Var<float>&, const pqmf::Bank&);
extern template ag::Var<double> pqmf_synth<double>(ag::Tape<double>*, const ag::Var<double>&, const pqmf::Bank&);

}  // namespace rave
