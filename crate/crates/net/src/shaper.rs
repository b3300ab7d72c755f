//! Shaped byte streams: token-bucket pacing plus a fixed one-way delay in
//! each direction.

use std::time::Duration;

use bytes::Bytes;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt, DuplexStream, ReadHalf, WriteHalf};
use tokio::sync::mpsc;
use tokio::time::{sleep_until, Instant};
use webforge_core::shaper::{ConnectivityProfile, TokenBucket};

const CHUNK: usize = 16 * 1024;

/// Wraps `inner` so that bytes crossing it in either direction are metered
/// at the profile's bandwidth and delivered `rtt/2` late. The returned
/// stream is the application side; each direction has its own bucket.
pub fn wrap_stream<S>(inner: S, profile: ConnectivityProfile) -> DuplexStream
where
    S: AsyncRead + AsyncWrite + Send + 'static,
{
    let (app, shaped) = tokio::io::duplex(4 * CHUNK);
    let (inner_r, inner_w): (ReadHalf<S>, WriteHalf<S>) = tokio::io::split(inner);
    let (shaped_r, shaped_w) = tokio::io::split(shaped);
    pump(inner_r, shaped_w, profile);
    pump(shaped_r, inner_w, profile);
    app
}

fn pump<R, W>(mut reader: R, mut writer: W, profile: ConnectivityProfile)
where
    R: AsyncRead + Unpin + Send + 'static,
    W: AsyncWrite + Unpin + Send + 'static,
{
    let delay = Duration::from_secs_f64(profile.one_way_delay_secs());
    let (tx, mut rx) = mpsc::unbounded_channel::<(Instant, Bytes)>();

    tokio::spawn(async move {
        let base = Instant::now();
        let mut bucket = TokenBucket::for_profile(&profile, 0.0);
        let mut buf = vec![0u8; CHUNK];
        loop {
            let n = match reader.read(&mut buf).await {
                Ok(0) | Err(_) => break,
                Ok(n) => n,
            };
            let now = Instant::now();
            let wait = bucket.reserve(n, now.duration_since(base).as_secs_f64());
            let leaves = now + Duration::from_secs_f64(wait);
            if tx.send((leaves + delay, Bytes::copy_from_slice(&buf[..n]))).is_err() {
                break;
            }
            sleep_until(leaves).await;
        }
    });

    tokio::spawn(async move {
        while let Some((due, chunk)) = rx.recv().await {
            sleep_until(due).await;
            if writer.write_all(&chunk).await.is_err() {
                return;
            }
        }
        let _ = writer.shutdown().await;
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn preserves_order_and_close() {
        let (a, b) = tokio::io::duplex(1 << 16);
        let profile = ConnectivityProfile::custom(800_000_000, 2).unwrap();
        let mut shaped = wrap_stream(a, profile);
        let (mut br, mut bw) = tokio::io::split(b);
        let payload: Vec<u8> = (0..200_000u32).map(|i| (i % 251) as u8).collect();
        let sent = payload.clone();
        let writer = tokio::spawn(async move {
            bw.write_all(&sent).await.unwrap();
            bw.shutdown().await.unwrap();
        });
        let mut got = Vec::new();
        shaped.read_to_end(&mut got).await.unwrap();
        writer.await.unwrap();
        assert_eq!(got, payload);

        shaped.write_all(b"pong").await.unwrap();
        shaped.shutdown().await.unwrap();
        let mut back = Vec::new();
        br.read_to_end(&mut back).await.unwrap();
        assert_eq!(back, b"pong");
    }

    #[tokio::test]
    async fn paces_at_bandwidth() {
        let (a, b) = tokio::io::duplex(1 << 16);
        // 8 Mbit/s: 100 kB takes 0.1 s, plus 10 ms one-way delay.
        let profile = ConnectivityProfile::custom(8_000_000, 20).unwrap();
        let mut shaped = wrap_stream(a, profile);
        let (_br, mut bw) = tokio::io::split(b);
        let start = std::time::Instant::now();
        tokio::spawn(async move {
            bw.write_all(&vec![7u8; 100_000]).await.unwrap();
            bw.shutdown().await.unwrap();
        });
        let mut got = Vec::new();
        shaped.read_to_end(&mut got).await.unwrap();
        let secs = start.elapsed().as_secs_f64();
        assert_eq!(got.len(), 100_000);
        assert!((0.095..0.2).contains(&secs), "{secs}");
    }
}
