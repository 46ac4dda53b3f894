use prls_core::dsp::{estimate_f0, F0Config};
use prls_lab::batch::{conditioning_mel, sample_batch, Features};
use prls_lab::corpus::{default_test_count, synth_clip, synth_corpus, Corpus, MANIFEST_NAME, PEAK};
use prls_lab::wav::{read_wav, write_wav, AudioClip, DEFAULT_SAMPLE_RATE, PCM_SCALE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn synthetic_pitch_is_recoverable() {
    let cfg = F0Config::default();
    let mut good = 0;
    let mut voiced = 0;
    for index in 0..6 {
        let s = synth_clip(1234, index, 1.5, DEFAULT_SAMPLE_RATE);
        let track = estimate_f0(&s.clip.samples, &cfg);
        for (f, (&est, &v)) in track.f0.iter().zip(&track.voiced).enumerate() {
            if !v {
                continue;
            }
            voiced += 1;
            let truth = s.f0[f * cfg.hop + cfg.frame_len / 2];
            if (est - truth).abs() <= 0.05 * truth {
                good += 1;
            }
        }
    }
    assert!(voiced > 0);
    assert!(good * 5 >= voiced * 4, "{good} of {voiced} voiced frames within 5%");
}

#[test]
fn clips_are_peak_normalized_and_pure() {
    for index in 0..4 {
        let a = synth_clip(7, index, 0.5, DEFAULT_SAMPLE_RATE);
        assert!((a.clip.peak() - PEAK).abs() <= 1e-6);
        assert_eq!(a, synth_clip(7, index, 0.5, DEFAULT_SAMPLE_RATE));
    }
    assert_ne!(synth_clip(7, 0, 0.5, DEFAULT_SAMPLE_RATE), synth_clip(8, 0, 0.5, DEFAULT_SAMPLE_RATE));
}

#[test]
fn corpus_survives_a_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(5, 9, 0.2, default_test_count(9), DEFAULT_SAMPLE_RATE).unwrap();
    corpus.save(dir.path()).unwrap();
    assert!(dir.path().join(MANIFEST_NAME).exists());
    let back = Corpus::load(dir.path()).unwrap();
    assert_eq!(back.train, corpus.train);
    assert_eq!(back.test, corpus.test);
    for (a, b) in corpus.clips.iter().zip(&back.clips) {
        assert_eq!(a.id, b.id);
        let worst = a.samples.iter().zip(&b.samples).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.5 / PCM_SCALE + 1e-12);
    }
}

#[test]
fn folder_without_manifest_holds_out_the_last_files() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..10 {
        let clip = AudioClip::new(format!("f{i:02}"), DEFAULT_SAMPLE_RATE, vec![0.1; 3000]).unwrap();
        write_wav(dir.path().join(format!("f{i:02}.wav")), &clip).unwrap();
    }
    let corpus = Corpus::load(dir.path()).unwrap();
    assert_eq!(corpus.test.len(), 1);
    assert_eq!(corpus.clips[corpus.test[0]].id, "f09");
    assert_eq!(corpus.train.len(), 9);
}

#[test]
fn mixed_sample_rates_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_wav(dir.path().join("a.wav"), &AudioClip::new("a", 22050, vec![0.0; 100]).unwrap()).unwrap();
    write_wav(dir.path().join("b.wav"), &AudioClip::new("b", 16000, vec![0.0; 100]).unwrap()).unwrap();
    let err = Corpus::load(dir.path()).unwrap_err().to_string();
    assert!(err.contains("sample rate"), "{err}");
}

#[test]
fn wav_files_round_trip_within_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let samples: Vec<f64> = (0..4000).map(|i| ((i as f64) * 0.013).sin() * 0.99).collect();
    let clip = AudioClip::new("s", 16000, samples).unwrap();
    let path = dir.path().join("s.wav");
    write_wav(&path, &clip).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.sample_rate, 16000);
    assert_eq!(back.id, "s");
    let worst = clip.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1.0 / PCM_SCALE);
}

#[test]
fn batches_are_a_function_of_the_rng_state() {
    let corpus = synth_corpus(3, 5, 0.5, 1, DEFAULT_SAMPLE_RATE).unwrap();
    let features = Features::<f32>::new(conditioning_mel(DEFAULT_SAMPLE_RATE)).unwrap();
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_batch(&corpus, &corpus.train, 2048, 3, &features, &mut rng).unwrap()
    };
    let (a, b) = (draw(4), draw(4));
    assert_eq!(a, b);
    assert_ne!(a.offsets, draw(5).offsets);
    assert_eq!(a.wav.shape(), &[3, 1, 2048]);
    assert_eq!(a.mel.shape(), &[3, 80, 8]);
    for (k, (&c, &o)) in a.clips.iter().zip(&a.offsets).enumerate() {
        assert!(corpus.train.contains(&c));
        let want: Vec<f32> = corpus.clips[c].samples[o..o + 2048].iter().map(|&v| v as f32).collect();
        assert_eq!(&a.wav.data()[k * 2048..(k + 1) * 2048], &want[..]);
    }
}
