# zk-Device package
