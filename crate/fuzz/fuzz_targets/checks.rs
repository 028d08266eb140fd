//! Target bodies, shared with the corpus replay test.

use fss_cli::RunConfig;
use fss_core::eval::EvalReport;
use fss_core::image::{BitDepth, GrayImage};
use fss_core::matcher::MatchesFile;
use fss_core::segmenter::remote::{parse_error_response, parse_segment_response};
use fss_core::similarity::{FeatureExtractor, InterchangeModelExtractor};
use fss_core::volume_io::{
    decode_gray_png, decode_mask_png, decode_mask_png_counting, encode_gray_png, encode_mask_png, VolumeManifest,
};

pub fn volume_manifest(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = VolumeManifest::from_json(text) {
            let again = VolumeManifest::from_json(&m.to_json()).expect("serialized manifest parses");
            assert_eq!(again, m);
        }
    }
}

pub fn gray_png(data: &[u8]) {
    if let Ok(img) = decode_gray_png(data) {
        let bytes = encode_gray_png(&img).expect("decoded image encodes");
        assert_eq!(decode_gray_png(&bytes).expect("re-decodes"), img);
    }
}

pub fn mask_png(data: &[u8]) {
    if let Ok((mask, _)) = decode_mask_png_counting(data) {
        assert!(mask.values().iter().all(|&v| v <= 1));
        let bytes = encode_mask_png(&mask).expect("decoded mask encodes");
        assert_eq!(decode_mask_png(&bytes).expect("re-decodes"), mask);
    }
}

/// The first two bytes pick the expected geometry; the rest is the body.
pub fn segment_response(data: &[u8]) {
    if data.len() < 2 {
        return;
    }
    let side = u32::from(data[0] % 16) + 1;
    let frames = usize::from(data[1] % 4) + 1;
    if let Ok(r) = parse_segment_response(&data[2..], (side, side), frames) {
        assert_eq!(r.masks.len(), frames);
        assert!(r.masks.iter().all(|m| m.dims() == (side, side)));
    }
}

pub fn error_response(data: &[u8]) {
    if data.len() < 2 {
        return;
    }
    let status = 400 + u16::from_le_bytes([data[0], data[1]]) % 200;
    let _ = parse_error_response(status, &data[2..]).to_string();
}

pub fn run_config(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_json(text) {
            let again = RunConfig::from_json(&cfg.to_json()).expect("serialized config parses");
            assert_eq!(again.to_json(), cfg.to_json());
        }
    }
}

pub fn matches_file(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = MatchesFile::from_json(text) {
            let again = MatchesFile::from_json(&m.to_json()).expect("serialized matches parse");
            assert_eq!(again.to_json(), m.to_json());
        }
    }
}

pub fn eval_report(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(r) = EvalReport::from_json(text) {
            let _ = r.table("fuzz");
            EvalReport::from_json(&r.to_json()).expect("serialized report parses");
        }
    }
}

pub fn interchange_model(data: &[u8]) {
    if let Ok(fx) = InterchangeModelExtractor::from_bytes(data) {
        let img = GrayImage::filled(16, 16, BitDepth::Eight, 100).unwrap();
        let _ = fx.extract(&img);
    }
}

pub type Check = fn(&[u8]);

/// Every target with its corpus directory name.
#[allow(dead_code)]
pub const TARGETS: [(&str, Check); 9] = [
    ("volume_manifest", volume_manifest),
    ("gray_png", gray_png),
    ("mask_png", mask_png),
    ("segment_response", segment_response),
    ("error_response", error_response),
    ("run_config", run_config),
    ("matches_file", matches_file),
    ("eval_report", eval_report),
    ("interchange_model", interchange_model),
];
