// Probe: desk-scale fixture dry-run for the acceptance criteria (dB path).
use senh_core::asv::{run_protocol, AsvConfig, EnrollCondition};
use senh_core::corpus::*;
use senh_core::dsp::{chunk_for_gan, stft_with};
use senh_core::enhance::{NoEnhancement, Pix2PixEnhancer};
use senh_core::metrics::stoi;
use senh_core::pix2pix::{
    enhance_pix2pix, generator_from_checkpoint, mag_to_db, train, training_chunks, TrainConfig,
};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let dir = std::env::temp_dir().join("senh-accept-probe2");
    let _ = std::fs::remove_dir_all(&dir);
    let mut manifest = synth_corpus(&dir, 12, 8, 4242).unwrap();
    println!("[{:>6.1}s] corpus: {} entries", t0.elapsed().as_secs_f64(), manifest.entries.len());

    let mut train_speakers: Vec<String> = manifest.in_split(Split::EnhancerTrain).iter().map(|e| e.speaker_id.clone()).collect();
    train_speakers.sort(); train_speakers.dedup();
    let mut noisy_mags = Vec::new();
    let mut clean_mags = Vec::new();
    let side = 64usize;
    for spk in &train_speakers {
        let entry = manifest.in_split(Split::EnhancerTrain).into_iter()
            .filter(|e| &e.speaker_id == spk).min_by_key(|e| e.text_id).unwrap().clone();
        let clean = load_wav(manifest.resolve(&entry)).unwrap();
        for noise_type in [NoiseType::White, NoiseType::CantineLike] {
            for snr in [10.0, 20.0] {
                let seed = derive_seed(4242, &format!("{}_{}_{}", entry.utterance_id, noise_type, snr));
                let noise = make_noise(noise_type, clean.len() + 16000, seed, &[]).unwrap();
                let noisy = mix_at_snr(&clean, &noise, snr, seed).unwrap();
                noisy_mags.push(stft_with(&noisy, 2 * side, side).unwrap().mag);
                clean_mags.push(stft_with(&clean, 2 * side, side).unwrap().mag);
            }
        }
    }
    let chunks = training_chunks(&noisy_mags, &clean_mags, side).unwrap();
    println!("[{:>6.1}s] {} chunk pairs", t0.elapsed().as_secs_f64(), chunks.len());
    // what does |y-x| look like now?
    let mut base = 0.0; let mut n_el = 0usize;
    for (ny, cl) in &chunks {
        for (a, b) in ny.data.data().iter().zip(cl.data.data()) { base += (a - b).abs(); n_el += 1; }
    }
    println!("  train mean |y-x| = {:.4} (normalized units)", base / n_el as f64);

    let cfg = TrainConfig { side, channel_base: 32, channel_cap: 64, seed: 77, ..TrainConfig::default() };
    let res = train(&chunks, &cfg).unwrap();
    let train_secs = t0.elapsed().as_secs_f64();
    println!("[{train_secs:>6.1}s] trained {} iters", res.history.len());
    let last = res.history.last().unwrap();
    println!("  final: d={:.3} adv={:.3} l1={:.3}", last.d_loss, last.g_adv, last.g_l1);

    // Held-out L1 at train SNRs.
    let (_, norm) = generator_from_checkpoint(&res.checkpoint).unwrap();
    let mut eval_test: Vec<ManifestEntry> = manifest.in_split(Split::Test).into_iter().cloned().collect();
    eval_test.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    let mut seen = std::collections::HashSet::new();
    let mut ratio_num = 0.0; let mut ratio_den = 0.0;
    let mut gnet = generator_from_checkpoint(&res.checkpoint).unwrap().0;
    for e in &eval_test {
        if !seen.insert(e.speaker_id.clone()) { continue; }
        let clean = load_wav(manifest.resolve(e)).unwrap();
        for noise_type in [NoiseType::White, NoiseType::CantineLike] {
            for snr in [10.0, 20.0] {
                let seed = derive_seed(999, &format!("{}_{}_{}", e.utterance_id, noise_type, snr));
                let noise = make_noise(noise_type, clean.len() + 16000, seed, &[]).unwrap();
                let noisy = mix_at_snr(&clean, &noise, snr, seed).unwrap();
                let ndb = mag_to_db(&stft_with(&noisy, 2 * side, side).unwrap().mag);
                let cdb = mag_to_db(&stft_with(&clean, 2 * side, side).unwrap().mag);
                let nset = chunk_for_gan(&ndb, norm, side).unwrap();
                let cset = chunk_for_gan(&cdb, norm, side).unwrap();
                for (nc, cc) in nset.chunks.iter().zip(cset.chunks.iter()) {
                    let y = senh_core::nn::Tensor::from_vec(&[1, 1, side, side], nc.data.data().to_vec());
                    let out = gnet.forward(&y, senh_core::nn::Mode::Eval);
                    for ((gv, nv), cv) in out.data().iter().zip(nc.data.data()).zip(cc.data.data()) {
                        ratio_num += (gv - cv).abs();
                        ratio_den += (nv - cv).abs();
                    }
                }
            }
        }
    }
    println!("[{:>6.1}s] held-out |G(y)-x|/|y-x| = {:.4}", t0.elapsed().as_secs_f64(), ratio_num / ratio_den);

    // STOI on white 0 dB + build test mixes into the manifest for ASV.
    std::fs::create_dir_all(dir.join("mixed")).unwrap();
    let mut improved = 0; let mut total = 0;
    for e in &eval_test {
        let clean = load_wav(manifest.resolve(e)).unwrap();
        let seed = derive_seed(555, &e.utterance_id);
        let noise = make_noise(NoiseType::White, clean.len() + 16000, seed, &[]).unwrap();
        let noisy = mix_at_snr(&clean, &noise, 0.0, seed).unwrap();
        let enhanced = enhance_pix2pix(&noisy, &res.checkpoint).unwrap();
        let s_noisy = stoi(&clean, &noisy).unwrap();
        let s_enh = stoi(&clean, &enhanced).unwrap();
        if s_enh > s_noisy { improved += 1; }
        total += 1;
        if total <= 3 { println!("  {}: noisy {:.3} enh {:.3}", e.utterance_id, s_noisy, s_enh); }
        // persist mix for ASV
        let tag = format!("{}__white_0db", e.utterance_id);
        let rel = std::path::PathBuf::from("mixed").join(format!("{tag}.wav"));
        save_wav(dir.join(&rel), &noisy).unwrap();
        manifest.entries.push(ManifestEntry {
            utterance_id: tag, speaker_id: e.speaker_id.clone(), text_id: e.text_id,
            session_id: e.session_id, file_path: rel,
            condition: Condition::Noisy { noise_type: NoiseType::White, snr_db: 0.0 },
        });
    }
    println!("[{:>6.1}s] STOI improved on {improved}/{total}", t0.elapsed().as_secs_f64());

    // EER direction check.
    let asv_cfg = AsvConfig::default();
    let base = run_protocol(&manifest, &NoEnhancement, EnrollCondition::Clean, &asv_cfg).unwrap();
    let enh = Pix2PixEnhancer { name: "pix2pix".into(), checkpoint: res.checkpoint.clone() };
    let gan = run_protocol(&manifest, &enh, EnrollCondition::Clean, &asv_cfg).unwrap();
    let e_noisy = base.eer_for(Some(NoiseType::White), Some(0.0));
    let e_enh = gan.eer_for(Some(NoiseType::White), Some(0.0));
    println!("[{:>6.1}s] EER white 0dB: none={:?} pix2pix={:?}", t0.elapsed().as_secs_f64(), e_noisy, e_enh);
    println!("  clean EER: none={:?} pix2pix={:?}", base.eer_for(None, None), gan.eer_for(None, None));
}
