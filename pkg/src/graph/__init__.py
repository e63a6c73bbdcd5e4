# Graph module for the per-image LangGraph SLAM workflow
