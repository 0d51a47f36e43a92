//! Broker backed by an AMQP 0-9-1 server.
//!
//! Jobs go to one durable queue; messages are acknowledged manually so the
//! server redelivers anything a crashed worker held. Dead letters go to
//! `<queue>.dead`.

use std::sync::Arc;

use async_trait::async_trait;
use futures_lite::StreamExt;
use lapin::options::{BasicAckOptions, BasicConsumeOptions, BasicPublishOptions, BasicQosOptions, QueueDeclareOptions};
use lapin::types::FieldTable;
use lapin::{BasicProperties, Channel, Connection, ConnectionProperties, Consumer};
use tokio::sync::Mutex;

use crate::broker::{Broker, BrokerError, Delivery, JobMessage};

const PERSISTENT: u8 = 2;

fn transport(e: lapin::Error) -> BrokerError {
    BrokerError::Transport(e.to_string())
}

pub struct AmqpBroker {
    _conn: Connection,
    channel: Channel,
    consumer: Mutex<Consumer>,
    queue: String,
    dead_queue: String,
}

impl AmqpBroker {
    pub async fn connect(uri: &str, queue: &str) -> Result<Arc<Self>, BrokerError> {
        let conn = Connection::connect(uri, ConnectionProperties::default())
            .await
            .map_err(transport)?;
        let channel = conn.create_channel().await.map_err(transport)?;
        channel
            .basic_qos(16, BasicQosOptions::default())
            .await
            .map_err(transport)?;
        let dead_queue = format!("{queue}.dead");
        for q in [queue, dead_queue.as_str()] {
            channel
                .queue_declare(
                    q,
                    QueueDeclareOptions {
                        durable: true,
                        ..Default::default()
                    },
                    FieldTable::default(),
                )
                .await
                .map_err(transport)?;
        }
        let consumer = channel
            .basic_consume(queue, "mtmc-worker", BasicConsumeOptions::default(), FieldTable::default())
            .await
            .map_err(transport)?;
        Ok(Arc::new(Self {
            _conn: conn,
            channel,
            consumer: Mutex::new(consumer),
            queue: queue.to_owned(),
            dead_queue,
        }))
    }

    async fn send(&self, queue: &str, payload: &[u8]) -> Result<(), BrokerError> {
        self.channel
            .basic_publish(
                "",
                queue,
                BasicPublishOptions::default(),
                payload,
                BasicProperties::default().with_delivery_mode(PERSISTENT),
            )
            .await
            .map_err(transport)?
            .await
            .map_err(transport)?;
        Ok(())
    }
}

#[async_trait]
impl Broker for AmqpBroker {
    async fn publish(&self, msg: &JobMessage) -> Result<(), BrokerError> {
        let payload = serde_json::to_vec(msg).map_err(|e| BrokerError::Transport(e.to_string()))?;
        self.send(&self.queue, &payload).await
    }

    async fn receive(&self) -> Result<Option<Delivery>, BrokerError> {
        loop {
            let next = self.consumer.lock().await.next().await;
            let Some(delivery) = next else {
                return Ok(None);
            };
            let delivery = delivery.map_err(transport)?;
            match serde_json::from_slice::<JobMessage>(&delivery.data) {
                Ok(message) => {
                    return Ok(Some(Delivery {
                        tag: delivery.delivery_tag,
                        message,
                        redelivered: delivery.redelivered,
                    }))
                }
                Err(e) => {
                    tracing::warn!(error = %e, "unparseable job message moved to dead letters");
                    self.send(&self.dead_queue, &delivery.data).await?;
                    self.channel
                        .basic_ack(delivery.delivery_tag, BasicAckOptions::default())
                        .await
                        .map_err(transport)?;
                }
            }
        }
    }

    async fn ack(&self, tag: u64) -> Result<(), BrokerError> {
        self.channel
            .basic_ack(tag, BasicAckOptions::default())
            .await
            .map_err(transport)
    }

    async fn dead_letter(&self, msg: &JobMessage) -> Result<(), BrokerError> {
        let payload = serde_json::to_vec(msg).map_err(|e| BrokerError::Transport(e.to_string()))?;
        self.send(&self.dead_queue, &payload).await
    }
}
