use std::io::{BufReader, Read};

use toxipipe_core::corpus::{dedup, Dedup, DedupOptions, JsonlPosts};
use toxipipe_core::Error;

/// Reader that produces `n` JSONL post lines on demand without holding
/// them: `distinct` author/text pairs repeated, every seventh line a repost.
struct Generated {
    n: usize,
    distinct: usize,
    i: usize,
    buf: Vec<u8>,
    pos: usize,
}

impl Generated {
    fn new(n: usize, distinct: usize) -> Self {
        Generated { n, distinct, i: 0, buf: Vec::new(), pos: 0 }
    }
}

impl Read for Generated {
    fn read(&mut self, out: &mut [u8]) -> std::io::Result<usize> {
        if self.pos == self.buf.len() {
            if self.i == self.n {
                return Ok(0);
            }
            let k = self.i % self.distinct;
            self.buf = format!(
                "{{\"post_id\":\"p{}\",\"author_id\":\"a{}\",\"created_at\":\"2024-01-01T00:00:00Z\",\"text\":\"message {k}\",\"source\":\"reddit-like\",\"is_repost\":{}}}\n",
                self.i,
                k % 17,
                self.i % 7 == 6
            )
            .into_bytes();
            self.pos = 0;
            self.i += 1;
        }
        let m = out.len().min(self.buf.len() - self.pos);
        out[..m].copy_from_slice(&self.buf[self.pos..self.pos + m]);
        self.pos += m;
        Ok(m)
    }
}

#[test]
fn dedup_state_is_bounded_by_distinct_posts() {
    let n = 200_000;
    let posts = JsonlPosts::new(BufReader::new(Generated::new(n, 100)));
    let mut state = Dedup::new(DedupOptions::default());
    let mut kept = 0;
    for p in posts {
        if state.admit(&p.unwrap()) {
            kept += 1;
        }
    }
    assert_eq!(kept, 100);
    assert_eq!(state.state_len(), 100);
    let reposts = (0..n).filter(|i| i % 7 == 6).count();
    assert_eq!(state.dropped_reposts(), reposts);
    assert_eq!(state.dropped_duplicates(), n - reposts - 100);
}

#[test]
fn dedup_keeps_first_occurrence_in_stream_order() {
    let posts = JsonlPosts::new(BufReader::new(Generated::new(1_000, 10))).map(Result::unwrap);
    let ids: Vec<String> = dedup(posts, DedupOptions { drop_reposts: false, drop_duplicates: true })
        .map(|p| p.post_id)
        .collect();
    assert_eq!(ids, (0..10).map(|i| format!("p{i}")).collect::<Vec<_>>());
}

#[test]
fn mostly_malformed_stream_ends_with_an_error() {
    let text = "not json\n{\"also\": 1}\n\n{\"post_id\":\"p\",\"author_id\":\"a\",\"created_at\":\"2024-01-01T00:00:00Z\",\"text\":\"t\",\"source\":\"twitter-like\"}\nnope\n";
    let mut posts = JsonlPosts::new(text.as_bytes());
    let items: Vec<_> = posts.by_ref().collect();
    assert_eq!(items.iter().filter(|r| r.is_ok()).count(), 1);
    assert!(matches!(items.last(), Some(Err(Error::Format { .. }))));
    assert_eq!((posts.total(), posts.skipped()), (4, 3));
}
