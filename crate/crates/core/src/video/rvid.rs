//! RVID raw container.
//!
//! Layout (little-endian): `"RVID"`, version `u16 = 1`, frames `u32`,
//! height `u32`, width `u32`, channels `u8 = 3`, then `T·H·W·3` pixel bytes,
//! frame-major, row-major, interleaved RGB.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{Video, CHANNELS};
use crate::error::{Error, Result};

pub const RVID_MAGIC: &[u8; 4] = b"RVID";
pub const RVID_VERSION: u16 = 1;
pub const RVID_HEADER_LEN: usize = 19;

fn header(video: &Video) -> Result<[u8; RVID_HEADER_LEN]> {
    let dim = |v: usize, name: &str| {
        u32::try_from(v).map_err(|_| Error::Format(format!("{name} {v} does not fit in u32")))
    };
    let mut h = [0u8; RVID_HEADER_LEN];
    h[0..4].copy_from_slice(RVID_MAGIC);
    h[4..6].copy_from_slice(&RVID_VERSION.to_le_bytes());
    h[6..10].copy_from_slice(&dim(video.frames(), "frame count")?.to_le_bytes());
    h[10..14].copy_from_slice(&dim(video.height(), "height")?.to_le_bytes());
    h[14..18].copy_from_slice(&dim(video.width(), "width")?.to_le_bytes());
    h[18] = CHANNELS as u8;
    Ok(h)
}

fn write_counted<W: Write>(sink: &mut W, mut buf: &[u8], written: &mut u64) -> Result<()> {
    while !buf.is_empty() {
        match sink.write(buf) {
            Ok(0) => {
                return Err(Error::Io {
                    bytes_written: *written,
                    source: ErrorKind::WriteZero.into(),
                })
            }
            Ok(n) => {
                *written += n as u64;
                buf = &buf[n..];
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(source) => {
                return Err(Error::Io {
                    bytes_written: *written,
                    source,
                })
            }
        }
    }
    Ok(())
}

/// Writes the container and returns the byte count, `19 + T·H·W·3`.
pub fn write_video<W: Write>(video: &Video, sink: &mut W) -> Result<u64> {
    let mut written = 0u64;
    write_counted(sink, &header(video)?, &mut written)?;
    write_counted(sink, video.data(), &mut written)?;
    sink.flush().map_err(|source| Error::Io {
        bytes_written: written,
        source,
    })?;
    Ok(written)
}

pub fn read_video<R: Read>(source: &mut R) -> Result<Video> {
    let mut h = [0u8; RVID_HEADER_LEN];
    let got = read_up_to(source, &mut h)?;
    if got >= 4 && &h[0..4] != RVID_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"RVID\"",
            String::from_utf8_lossy(&h[0..4])
        )));
    }
    if got < RVID_HEADER_LEN {
        if got < 4 {
            return Err(Error::Format("stream too short for RVID magic".into()));
        }
        return Err(Error::Truncated {
            expected: RVID_HEADER_LEN as u64,
            found: got as u64,
        });
    }
    let version = u16::from_le_bytes([h[4], h[5]]);
    if version != RVID_VERSION {
        return Err(Error::Unsupported(format!("RVID version {version}")));
    }
    let u32_at = |i: usize| u32::from_le_bytes([h[i], h[i + 1], h[i + 2], h[i + 3]]) as usize;
    let (frames, height, width) = (u32_at(6), u32_at(10), u32_at(14));
    let channels = h[18];
    if channels as usize != CHANNELS {
        return Err(Error::Unsupported(format!("{channels} channels, only 3 supported")));
    }
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::Format(format!(
            "zero dimension in header: {frames}x{height}x{width}"
        )));
    }
    let len = frames
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .and_then(|v| v.checked_mul(CHANNELS))
        .ok_or_else(|| Error::Format("declared size overflows".into()))?;

    // Read incrementally so a lying header cannot force a huge allocation up front.
    let mut data = Vec::new();
    let got = source
        .take(len as u64)
        .read_to_end(&mut data)
        .map_err(|source| Error::Io {
            bytes_written: 0,
            source,
        })?;
    if got < len {
        return Err(Error::Truncated {
            expected: len as u64,
            found: got as u64,
        });
    }
    Video::new(frames, height, width, data)
}

fn read_up_to<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(source) => {
                return Err(Error::Io {
                    bytes_written: 0,
                    source,
                })
            }
        }
    }
    Ok(filled)
}

pub fn write_video_file(video: &Video, path: &Path) -> Result<u64> {
    let file = File::create(path).map_err(|e| Error::path_io(path, e))?;
    let mut w = BufWriter::new(file);
    write_video(video, &mut w)
}

pub fn read_video_file(path: &Path) -> Result<Video> {
    let file = File::open(path).map_err(|e| Error::path_io(path, e))?;
    read_video(&mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roundtrip(v: &Video) -> Video {
        let mut buf = Vec::new();
        write_video(v, &mut buf).unwrap();
        read_video(&mut buf.as_slice()).unwrap()
    }

    #[test]
    fn single_pixel_layout() {
        let v = Video::new(1, 1, 1, vec![0, 128, 255]).unwrap();
        let mut buf = Vec::new();
        assert_eq!(write_video(&v, &mut buf).unwrap(), 22);
        assert_eq!(buf.len(), 22);
        assert_eq!(&buf[..4], b"RVID");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(buf[18], 3);
        assert_eq!(&buf[19..], &[0x00, 0x80, 0xFF]);
    }

    #[test]
    fn byte_count_matches_shape() {
        let v = Video::filled(2, 4, 4, 7).unwrap();
        let mut buf = Vec::new();
        assert_eq!(write_video(&v, &mut buf).unwrap(), 115);
        assert_eq!(roundtrip(&v), v);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = b"XVID".to_vec();
        bytes.extend_from_slice(&[0u8; 40]);
        assert!(matches!(read_video(&mut bytes.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload() {
        let v = Video::filled(1, 2, 2, 9).unwrap();
        let mut buf = Vec::new();
        write_video(&v, &mut buf).unwrap();
        buf.truncate(RVID_HEADER_LEN + 5);
        assert!(matches!(
            read_video(&mut buf.as_slice()),
            Err(Error::Truncated { expected: 12, found: 5 })
        ));
    }

    #[test]
    fn truncated_header() {
        let bytes = b"RVID\x01\x00\x01".to_vec();
        assert!(matches!(read_video(&mut bytes.as_slice()), Err(Error::Truncated { .. })));
    }

    #[test]
    fn wrong_channel_count() {
        let v = Video::filled(1, 1, 1, 0).unwrap();
        let mut buf = Vec::new();
        write_video(&v, &mut buf).unwrap();
        buf[18] = 4;
        assert!(matches!(read_video(&mut buf.as_slice()), Err(Error::Unsupported(_))));
    }

    struct FailAfter(usize);
    impl Write for FailAfter {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            if self.0 == 0 {
                return Err(std::io::Error::other("disk full"));
            }
            let n = buf.len().min(self.0);
            self.0 -= n;
            Ok(n)
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn sink_failure_reports_progress() {
        let v = Video::filled(1, 4, 4, 1).unwrap();
        match write_video(&v, &mut FailAfter(25)) {
            Err(Error::Io { bytes_written, .. }) => assert_eq!(bytes_written, 25),
            other => panic!("expected io error, got {other:?}"),
        }
    }

    fn arb_video() -> impl Strategy<Value = Video> {
        (1usize..=8, 1usize..=64, 1usize..=64).prop_flat_map(|(t, h, w)| {
            proptest::collection::vec(any::<u8>(), t * h * w * 3)
                .prop_map(move |data| Video::new(t, h, w, data).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn write_read_identity(v in arb_video()) {
            prop_assert_eq!(roundtrip(&v), v);
        }
    }
}
