//! `FPK1` feature packs.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "FPK1"
//!      4     4  version (u32 LE, currently 1)
//!      8     4  n_videos
//!     12     4  L (frames)
//!     16     4  P² (patches)
//!     20     4  D (channels)
//!     24     4  n_classes
//!     28        n_videos × { class_id: u32, L·P²·D × f32 }   row-major [frame, patch, channel]
//! ```
//!
//! All integers and floats are little-endian. A valid file is exactly
//! `HEADER_LEN + n_videos · (4 + 4·L·P²·D)` bytes long. Class ids are the
//! positions of the classes in the dataset, so names are not stored.

use std::fs;
use std::path::Path;

use crate::error::DataError;
use crate::features::{ClassRecord, FeatureDataset, FeatureVideo, DataOrigin};

pub const MAGIC: [u8; 4] = *b"FPK1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 28;

/// Byte length a pack with this header must have.
pub fn expected_len(n_videos: u64, shape: [usize; 3]) -> u64 {
    let per_video = 4 + 4 * shape.iter().map(|&x| x as u64).product::<u64>();
    HEADER_LEN + n_videos * per_video
}

pub fn encode_feature_pack(dataset: &FeatureDataset) -> Vec<u8> {
    let shape = dataset.shape();
    let n_videos = dataset.n_videos();
    let mut out = Vec::with_capacity(expected_len(n_videos as u64, shape) as usize);
    out.extend_from_slice(&MAGIC);
    for v in [
        VERSION,
        n_videos as u32,
        shape[0] as u32,
        shape[1] as u32,
        shape[2] as u32,
        dataset.classes().len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (ci, class) in dataset.classes().iter().enumerate() {
        for video in &class.videos {
            out.extend_from_slice(&(ci as u32).to_le_bytes());
            for x in video.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

pub fn write_feature_pack(dataset: &FeatureDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    fs::write(path, encode_feature_pack(dataset))?;
    Ok(())
}

pub fn read_feature_pack(path: impl AsRef<Path>) -> Result<FeatureDataset, DataError> {
    decode_feature_pack(&fs::read(path)?)
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4-byte slice"))
}

pub fn decode_feature_pack(bytes: &[u8]) -> Result<FeatureDataset, DataError> {
    if (bytes.len() as u64) < HEADER_LEN {
        return Err(DataError::Parse {
            offset: bytes.len(),
            message: format!("truncated header: need {HEADER_LEN} bytes, file has {}", bytes.len()),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(DataError::Parse {
            offset: 0,
            message: format!("bad magic {:?}, expected \"FPK1\"", &bytes[..4]),
        });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(DataError::Parse {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let n_videos = u32_at(bytes, 8) as u64;
    let shape = [
        u32_at(bytes, 12) as usize,
        u32_at(bytes, 16) as usize,
        u32_at(bytes, 20) as usize,
    ];
    let n_classes = u32_at(bytes, 24);
    let expected = expected_len(n_videos, shape);
    if bytes.len() as u64 != expected {
        return Err(DataError::Length {
            expected,
            actual: bytes.len() as u64,
        });
    }
    if n_videos > 0 {
        if let Some(axis) = shape.iter().position(|&x| x == 0) {
            return Err(DataError::Parse {
                offset: 12 + 4 * axis,
                message: "zero extent in video shape".into(),
            });
        }
    }

    let mut classes: Vec<ClassRecord> = (0..n_classes)
        .map(|id| ClassRecord {
            id,
            name: format!("class{id}"),
            videos: Vec::new(),
        })
        .collect();
    let values = shape.iter().product::<usize>();
    let mut offset = HEADER_LEN as usize;
    for _ in 0..n_videos {
        let class_id = u32_at(bytes, offset);
        if class_id >= n_classes {
            return Err(DataError::Parse {
                offset,
                message: format!("class id {class_id} is not below n_classes {n_classes}"),
            });
        }
        offset += 4;
        let data: Vec<f32> = bytes[offset..offset + 4 * values]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        offset += 4 * values;
        let video = FeatureVideo::from_data(shape, data).map_err(|e| DataError::Parse {
            offset,
            message: e.to_string(),
        })?;
        classes[class_id as usize].videos.push(video);
    }
    FeatureDataset::new(shape, classes, DataOrigin::File)
}
