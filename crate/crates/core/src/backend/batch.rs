use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{complete, ChatBackend, ChatRequest, ChatResponse, CompletionError, RetryPolicy};

/// Completes every request with at most `policy.max_parallel` in flight.
///
/// `output[i]` is the result for `requests[i]`. A failed item never affects
/// the others. With `max_parallel == 1` requests are sent one after another on
/// the calling thread.
pub fn complete_batch<B: ChatBackend + ?Sized>(
    backend: &B,
    requests: &[ChatRequest],
    policy: &RetryPolicy,
) -> Vec<Result<ChatResponse, CompletionError>> {
    let workers = policy.max_parallel.max(1).min(requests.len());
    if workers <= 1 {
        return requests.iter().map(|r| complete(backend, r, policy)).collect();
    }

    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<ChatResponse, CompletionError>>>> =
        requests.iter().map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(request) = requests.get(i) else { break };
                let result = complete(backend, request, policy);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });

    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every index is claimed by a worker"))
        .collect()
}
